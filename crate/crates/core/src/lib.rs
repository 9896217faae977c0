//! Stochastic block influence model (SBIM): a mixed-membership block model for
//! network formation joined with a logistic adoption model driven by
//! block-level peer influence.

// `!(x >= 0.0)` style checks are used on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod baselines;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod latent;
pub mod math;
pub mod model;

pub use data::{Adjacency, Dataset};
pub use error::{Error, Result};
pub use latent::{Hyperparameters, LatentState};
pub use model::{MaskMode, ModelConfig, NoiseMode, SbimModel};
