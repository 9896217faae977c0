//! Bijection between the constrained latent space and ℝ^P.
//!
//! Membership rows use stick-breaking with the `ln(C - 1 - k)` offset so that
//! the zero vector maps to the uniform simplex point. Connectivity entries go
//! through the logistic function; influence and coefficients are identity.
//!
//! Flat layout: `[membership_raw (N x (C-1), row-major), connectivity_raw
//! (C x C, row-major), influence (C x C, row-major), coefficients (D)]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::latent::LatentState;
use crate::math::{log_sigmoid, logit, sigmoid, PROB_CLAMP};
use crate::model::{LogParts, SbimModel};

/// Dimensions of the unconstrained parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n_nodes: usize,
    pub n_blocks: usize,
    pub n_covariates: usize,
}

impl Layout {
    pub fn new(n_nodes: usize, n_blocks: usize, n_covariates: usize) -> Self {
        Self {
            n_nodes,
            n_blocks,
            n_covariates,
        }
    }

    /// `N (C - 1) + 2 C² + D`.
    pub fn dim(&self) -> usize {
        let c = self.n_blocks;
        self.n_nodes * (c - 1) + 2 * c * c + self.n_covariates
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let c = self.n_blocks;
        let b = self.n_nodes * (c - 1);
        let f = b + c * c;
        (b, f, f + c * c)
    }
}

/// Unconstrained coordinates of a [`LatentState`].
#[derive(Debug, Clone, PartialEq)]
pub struct UnconstrainedState {
    /// N x (C - 1) stick-breaking coordinates.
    pub membership_raw: DMatrix<f64>,
    /// C x C logits of the connectivity.
    pub connectivity_raw: DMatrix<f64>,
    pub influence_raw: DMatrix<f64>,
    pub coefficients_raw: DVector<f64>,
}

impl UnconstrainedState {
    pub fn layout(&self) -> Layout {
        Layout::new(
            self.membership_raw.nrows(),
            self.connectivity_raw.nrows(),
            self.coefficients_raw.len(),
        )
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layout().dim());
        for m in [&self.membership_raw, &self.connectivity_raw, &self.influence_raw] {
            for row in m.row_iter() {
                out.extend(row.iter());
            }
        }
        out.extend(self.coefficients_raw.iter());
        out
    }

    pub fn from_slice(layout: Layout, flat: &[f64]) -> Result<Self> {
        if flat.len() != layout.dim() {
            return Err(Error::Dimension(format!(
                "unconstrained vector has length {}, expected {}",
                flat.len(),
                layout.dim()
            )));
        }
        let (c, n) = (layout.n_blocks, layout.n_nodes);
        let (ob, of, ob2) = layout.offsets();
        Ok(Self {
            membership_raw: DMatrix::from_row_slice(n, c - 1, &flat[..ob]),
            connectivity_raw: DMatrix::from_row_slice(c, c, &flat[ob..of]),
            influence_raw: DMatrix::from_row_slice(c, c, &flat[of..ob2]),
            coefficients_raw: DVector::from_column_slice(&flat[ob2..]),
        })
    }
}

#[inline]
fn stick_offset(c: usize, k: usize) -> f64 {
    ((c - 1 - k) as f64).ln()
}

/// Forward map of one membership row, in log space.
///
/// Fills `log_x` (length C) and returns `(z, log_rem, log_jacobian)` where
/// `z[k]` is the fraction of the remaining stick taken at step `k`.
fn stick_forward(y: &[f64], log_x: &mut [f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let c = log_x.len();
    let mut z = Vec::with_capacity(c - 1);
    let mut log_rem = Vec::with_capacity(c);
    let mut lr = 0.0;
    let mut log_jac = 0.0;
    for (k, &yk) in y.iter().enumerate() {
        let s = yk - stick_offset(c, k);
        let lz = log_sigmoid(s);
        let l1mz = log_sigmoid(-s);
        log_rem.push(lr);
        log_x[k] = lr + lz;
        log_jac += lz + l1mz + lr;
        z.push(sigmoid(s));
        lr += l1mz;
    }
    log_rem.push(lr);
    log_x[c - 1] = lr;
    (z, log_rem, log_jac)
}

/// Constrained state plus the stable log-quantities and log-Jacobian.
pub(crate) struct Forward {
    pub state: LatentState,
    pub logs: LogParts,
    pub log_jacobian: f64,
    /// Stick fractions, row-major N x (C - 1).
    z: Vec<f64>,
    /// Log remaining stick, row-major N x C.
    log_rem: Vec<f64>,
}

pub(crate) fn forward(layout: Layout, flat: &[f64]) -> Forward {
    let (n, c, d) = (layout.n_nodes, layout.n_blocks, layout.n_covariates);
    let (ob, of, ob2) = layout.offsets();
    let mut log_membership = DMatrix::zeros(n, c);
    let mut z = Vec::with_capacity(n * (c - 1));
    let mut log_rem = Vec::with_capacity(n * c);
    let mut log_jacobian = 0.0;
    let mut row = vec![0.0; c];
    for i in 0..n {
        let y = &flat[i * (c - 1)..(i + 1) * (c - 1)];
        let (zi, lri, lj) = stick_forward(y, &mut row);
        for k in 0..c {
            log_membership[(i, k)] = row[k];
        }
        z.extend(zi);
        log_rem.extend(lri);
        log_jacobian += lj;
    }
    let raw_b = DMatrix::from_row_slice(c, c, &flat[ob..of]);
    let log_connectivity = raw_b.map(log_sigmoid);
    let log1m_connectivity = raw_b.map(|v| log_sigmoid(-v));
    log_jacobian += log_connectivity.sum() + log1m_connectivity.sum();

    let state = LatentState {
        membership: log_membership.map(f64::exp),
        connectivity: raw_b.map(sigmoid),
        influence: DMatrix::from_row_slice(c, c, &flat[of..ob2]),
        coefficients: DVector::from_column_slice(&flat[ob2..ob2 + d]),
    };
    Forward {
        state,
        logs: LogParts {
            log_membership,
            log_connectivity,
            log1m_connectivity,
        },
        log_jacobian,
        z,
        log_rem,
    }
}

pub fn transform(u: &UnconstrainedState) -> LatentState {
    forward(u.layout(), &u.to_vec()).state
}

/// Inverse of [`transform`]. Memberships at the simplex boundary are pulled
/// in by `PROB_CLAMP`, connectivity likewise.
pub fn inverse_transform(state: &LatentState) -> UnconstrainedState {
    let (n, c) = (state.n_nodes(), state.n_blocks());
    let mut membership_raw = DMatrix::zeros(n, c - 1);
    for i in 0..n {
        let mut rem = 1.0;
        for k in 0..c - 1 {
            let x = state.membership[(i, k)];
            let z = if rem > 0.0 { x / rem } else { 0.5 };
            let z = z.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            membership_raw[(i, k)] = logit(z) + stick_offset(c, k);
            rem -= x;
        }
    }
    UnconstrainedState {
        membership_raw,
        connectivity_raw: state
            .connectivity
            .map(|b| logit(b.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))),
        influence_raw: state.influence.clone(),
        coefficients_raw: state.coefficients.clone(),
    }
}

/// Log-Jacobian of [`transform`] at `u`.
pub fn log_jacobian(u: &UnconstrainedState) -> f64 {
    forward(u.layout(), &u.to_vec()).log_jacobian
}

fn layout_for(model: &SbimModel<'_>, flat_len: usize) -> Result<Layout> {
    let n = model.data().n();
    let d = model.data().n_covariates();
    // Solve flat_len = n (C - 1) + 2 C² + d for C.
    let mut c = 1;
    loop {
        let layout = Layout::new(n, c, d);
        match layout.dim().cmp(&flat_len) {
            std::cmp::Ordering::Equal => return Ok(layout),
            std::cmp::Ordering::Greater => {
                return Err(Error::Dimension(format!(
                    "no block count matches parameter length {flat_len}"
                )))
            }
            std::cmp::Ordering::Less => c += 1,
        }
    }
}

/// Unconstrained log-density: log-joint of the transformed state plus log-Jacobian.
pub fn log_density(model: &SbimModel<'_>, flat: &[f64]) -> Result<f64> {
    let layout = layout_for(model, flat.len())?;
    let fwd = forward(layout, flat);
    let (terms, _) = model.evaluate(&fwd.state, &fwd.logs, false);
    let value = terms.total() + fwd.log_jacobian;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            what: "log density",
            index: 0,
        });
    }
    Ok(value)
}

/// Unconstrained log-density and its gradient.
pub fn log_density_and_gradient(model: &SbimModel<'_>, flat: &[f64]) -> Result<(f64, Vec<f64>)> {
    let layout = layout_for(model, flat.len())?;
    let mut out = vec![0.0; layout.dim()];
    let value = density_and_gradient_into(model, layout, flat, &mut out)?;
    Ok((value, out))
}

/// Writes the gradient into `out` (length `layout.dim()`) and returns the density.
pub(crate) fn density_and_gradient_into(
    model: &SbimModel<'_>,
    layout: Layout,
    flat: &[f64],
    out: &mut [f64],
) -> Result<f64> {
    let (n, c) = (layout.n_nodes, layout.n_blocks);
    let conc = model.hyper().dirichlet_c;
    let (a, b) = (model.hyper().beta_a, model.hyper().beta_b);
    let fwd = forward(layout, flat);
    let (terms, grad) = model.evaluate(&fwd.state, &fwd.logs, true);
    let value = terms.total() + fwd.log_jacobian;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            what: "log density",
            index: 0,
        });
    }
    let g = grad.expect("gradient requested");
    let (ob, of, _) = layout.offsets();

    for i in 0..n {
        let z = &fwd.z[i * (c - 1)..(i + 1) * (c - 1)];
        let log_rem = &fwd.log_rem[i * c..(i + 1) * c];
        let out_row = &mut out[i * (c - 1)..(i + 1) * (c - 1)];
        // Reverse pass of the likelihood through the stick.
        let mut adj_rem = g.membership[(i, c - 1)];
        for k in (0..c - 1).rev() {
            let gk = g.membership[(i, k)];
            let rem = log_rem[k].exp();
            let adj_z = rem * (gk - adj_rem);
            out_row[k] = adj_z * z[k] * (1.0 - z[k]);
            adj_rem = gk * z[k] + adj_rem * (1.0 - z[k]);
        }
        // Dirichlet prior plus log-Jacobian, differentiated in closed form.
        for k in 0..c - 1 {
            out_row[k] += conc * (1.0 - z[k]) - conc * (c - 1 - k) as f64 * z[k];
        }
    }
    for k in 0..c {
        for l in 0..c {
            let p = fwd.state.connectivity[(k, l)];
            out[ob + k * c + l] = g.connectivity[(k, l)] * p * (1.0 - p) + a * (1.0 - p) - b * p;
            out[of + k * c + l] = g.influence[(k, l)];
        }
    }
    let ob2 = of + c * c;
    out[ob2..].copy_from_slice(g.coefficients.as_slice());

    if let Some(index) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "gradient",
            index,
        });
    }
    Ok(value)
}
