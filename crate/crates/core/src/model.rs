//! The stochastic block influence model.
//!
//! Links form independently with probability `(M B Mᵀ)_ij`. Adoption of node
//! `i` is Bernoulli with success probability
//! `σ(β·x_i + Σ_j (M F Mᵀ)_ji · mask_ji + ε_i)`, where the mask keeps
//! neighbors `j` of `i` that are eligible to exert influence (aware, any, or
//! adopters, depending on [`MaskMode`]).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Adjacency, Dataset};
use crate::error::{Error, Result};
use crate::inference::transform::{self, UnconstrainedState};
use crate::latent::{Hyperparameters, LatentState};
use crate::math::{bernoulli_ll, ln_beta_fn, ln_dirichlet_norm, normal_ln_pdf, sigmoid};

/// Which neighbors contribute to the influence sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Neighbors that are aware of the product.
    #[default]
    Awareness,
    /// Every neighbor (mature product).
    AllNeighbors,
    /// Neighbors that adopted. Neighbors whose outcome is held out count as non-adopters.
    AdoptersOnly,
}

/// Idiosyncratic noise added inside the sigmoid when simulating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    #[default]
    Zero,
    GaussianUnit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub awareness_mask_mode: MaskMode,
    pub noise_mode: NoiseMode,
}

/// Masked pairwise influence and its per-receiver sums.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceTerm {
    /// `per_node[i] = Σ_j per_pair[(j, i)]`.
    pub per_node: DVector<f64>,
    /// `per_pair[(j, i)]`: influence of sender `j` on receiver `i`.
    pub per_pair: DMatrix<f64>,
}

fn check_dims(state: &LatentState, data: &Dataset) -> Result<()> {
    if state.n_nodes() != data.n() {
        return Err(Error::Dimension(format!(
            "state has {} nodes, dataset has {}",
            state.n_nodes(),
            data.n()
        )));
    }
    if state.n_covariates() != data.n_covariates() {
        return Err(Error::Dimension(format!(
            "state has {} coefficients, dataset has {} covariates",
            state.n_covariates(),
            data.n_covariates()
        )));
    }
    let c = state.n_blocks();
    if state.connectivity.shape() != (c, c) || state.influence.shape() != (c, c) {
        return Err(Error::Dimension("block matrices are not C x C".into()));
    }
    Ok(())
}

/// Probability of a link between `i` and `j`: `Σ_{k,l} M_ik B_kl M_jl`.
pub fn link_probability(state: &LatentState, i: usize, j: usize) -> Result<f64> {
    if i == j {
        return Err(Error::Invalid(format!("no self-links (node {i})")));
    }
    let n = state.n_nodes();
    if i >= n || j >= n {
        return Err(Error::Invalid(format!("node index out of range for {n} nodes")));
    }
    let p = (state.membership.row(i) * &state.connectivity * state.membership.row(j).transpose())[0];
    Ok(p.clamp(0.0, 1.0))
}

/// Full `M B Mᵀ` matrix (diagonal included, though self-links are never used).
pub fn link_probabilities(state: &LatentState) -> DMatrix<f64> {
    &state.membership * &state.connectivity * state.membership.transpose()
}

/// Weight each node carries as an influence sender.
fn sender_weights(data: &Dataset, mode: MaskMode, observed: &[bool]) -> Vec<f64> {
    (0..data.n())
        .map(|j| match mode {
            MaskMode::Awareness => f64::from(data.awareness()[j]),
            MaskMode::AllNeighbors => 1.0,
            MaskMode::AdoptersOnly => {
                if observed[j] {
                    f64::from(data.adoption()[j])
                } else {
                    0.0
                }
            }
        })
        .collect()
}

pub fn influence_term(state: &LatentState, data: &Dataset, config: &ModelConfig) -> InfluenceTerm {
    influence_term_observed(state, data, config, &vec![true; data.n()])
}

fn influence_term_observed(
    state: &LatentState,
    data: &Dataset,
    config: &ModelConfig,
    observed: &[bool],
) -> InfluenceTerm {
    let n = data.n();
    let w = sender_weights(data, config.awareness_mask_mode, observed);
    let mfm = &state.membership * &state.influence * state.membership.transpose();
    let adj = data.adjacency();
    let mut per_pair = DMatrix::zeros(n, n);
    for i in 0..n {
        for &j in adj.neighbors(i) {
            if w[j] != 0.0 {
                per_pair[(j, i)] = mfm[(j, i)] * w[j];
            }
        }
    }
    let per_node = DVector::from_fn(n, |i, _| per_pair.column(i).sum());
    InfluenceTerm { per_node, per_pair }
}

/// Adoption probability of node `i` with idiosyncratic shock `noise`.
pub fn adoption_probability(
    state: &LatentState,
    data: &Dataset,
    config: &ModelConfig,
    i: usize,
    noise: f64,
) -> f64 {
    let term = influence_term(state, data, config);
    let linear = (data.covariates().row(i) * &state.coefficients)[0];
    sigmoid(linear + term.per_node[i] + noise)
}

/// Noise-free adoption probabilities for every node.
pub fn predict(state: &LatentState, data: &Dataset, config: &ModelConfig) -> Vec<f64> {
    SbimModel::new(data, Hyperparameters::default(), *config).predict(state)
}

/// `ln` of membership and connectivity entries, computed stably by the
/// unconstrained transform so priors stay finite near the boundary.
#[derive(Debug, Clone)]
pub struct LogParts {
    pub log_membership: DMatrix<f64>,
    pub log_connectivity: DMatrix<f64>,
    pub log1m_connectivity: DMatrix<f64>,
}

impl LogParts {
    fn from_state(state: &LatentState) -> Self {
        let tiny = f64::MIN_POSITIVE;
        Self {
            log_membership: state.membership.map(|v| v.max(tiny).ln()),
            log_connectivity: state.connectivity.map(|v| v.max(tiny).ln()),
            log1m_connectivity: state.connectivity.map(|v| (1.0 - v).max(tiny).ln()),
        }
    }
}

/// Log-joint broken down by factor.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LogJointTerms {
    pub membership_prior: f64,
    pub connectivity_prior: f64,
    pub influence_prior: f64,
    pub coefficient_prior: f64,
    pub links: f64,
    pub outcomes: f64,
}

impl LogJointTerms {
    pub fn total(&self) -> f64 {
        self.membership_prior
            + self.connectivity_prior
            + self.influence_prior
            + self.coefficient_prior
            + self.links
            + self.outcomes
    }
}

/// Derivatives of the log-joint with respect to the constrained parameters.
///
/// `membership` and `connectivity` carry likelihood terms only; their priors
/// are differentiated in unconstrained coordinates by the transform.
/// `influence` and `coefficients` include their Gaussian prior scores.
#[derive(Debug, Clone)]
pub struct NaturalGradient {
    pub membership: DMatrix<f64>,
    pub connectivity: DMatrix<f64>,
    pub influence: DMatrix<f64>,
    pub coefficients: DVector<f64>,
}

/// Log-joint over a dataset with a fixed prior and an outcome mask.
///
/// Nodes with `observed[i] == false` keep their links in the likelihood but
/// drop their adoption term.
#[derive(Debug, Clone)]
pub struct SbimModel<'a> {
    data: &'a Dataset,
    hyper: Hyperparameters,
    config: ModelConfig,
    observed: Vec<bool>,
}

impl<'a> SbimModel<'a> {
    pub fn new(data: &'a Dataset, hyper: Hyperparameters, config: ModelConfig) -> Self {
        Self {
            data,
            hyper,
            config,
            observed: vec![true; data.n()],
        }
    }

    pub fn with_observed(mut self, observed: Vec<bool>) -> Result<Self> {
        if observed.len() != self.data.n() {
            return Err(Error::Dimension(format!(
                "outcome mask has length {}, expected {}",
                observed.len(),
                self.data.n()
            )));
        }
        self.observed = observed;
        Ok(self)
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn hyper(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    pub fn influence_term(&self, state: &LatentState) -> InfluenceTerm {
        influence_term_observed(state, self.data, &self.config, &self.observed)
    }

    /// Noise-free adoption probabilities for every node.
    pub fn predict(&self, state: &LatentState) -> Vec<f64> {
        let eta = self.linear_predictor(state, &self.aggregate_senders(state));
        eta.iter().map(|&e| sigmoid(e)).collect()
    }

    /// `agg[i] = Σ_{j ∈ N(i)} w_j M_j`, row-major N x C.
    fn aggregate_senders(&self, state: &LatentState) -> Vec<f64> {
        let n = self.data.n();
        let c = state.n_blocks();
        let w = sender_weights(self.data, self.config.awareness_mask_mode, &self.observed);
        let adj = self.data.adjacency();
        let mut agg = vec![0.0; n * c];
        for i in 0..n {
            let row = &mut agg[i * c..(i + 1) * c];
            for &j in adj.neighbors(i) {
                if w[j] != 0.0 {
                    for (k, a) in row.iter_mut().enumerate() {
                        *a += w[j] * state.membership[(j, k)];
                    }
                }
            }
        }
        agg
    }

    fn linear_predictor(&self, state: &LatentState, agg: &[f64]) -> Vec<f64> {
        let c = state.n_blocks();
        let x = self.data.covariates();
        let f = &state.influence;
        (0..self.data.n())
            .map(|i| {
                let mut eta = 0.0;
                for d in 0..x.ncols() {
                    eta += x[(i, d)] * state.coefficients[d];
                }
                for k in 0..c {
                    let a = agg[i * c + k];
                    if a == 0.0 {
                        continue;
                    }
                    for l in 0..c {
                        eta += a * f[(k, l)] * state.membership[(i, l)];
                    }
                }
                eta
            })
            .collect()
    }

    pub fn log_joint_terms(&self, state: &LatentState) -> Result<LogJointTerms> {
        check_dims(state, self.data)?;
        Ok(self.evaluate(state, &LogParts::from_state(state), false).0)
    }

    pub fn log_joint(&self, state: &LatentState) -> Result<f64> {
        Ok(self.log_joint_terms(state)?.total())
    }

    /// Log-joint terms and, if `with_gradient`, the natural-parameter gradient.
    pub(crate) fn evaluate(
        &self,
        state: &LatentState,
        logs: &LogParts,
        with_gradient: bool,
    ) -> (LogJointTerms, Option<NaturalGradient>) {
        let n = self.data.n();
        let c = state.n_blocks();
        let h = &self.hyper;
        let m = &state.membership;
        let b = &state.connectivity;
        let f = &state.influence;

        // Priors.
        let mut terms = LogJointTerms {
            membership_prior: n as f64 * ln_dirichlet_norm(h.dirichlet_c, c),
            ..LogJointTerms::default()
        };
        if c > 1 && h.dirichlet_c != 1.0 {
            terms.membership_prior += (h.dirichlet_c - 1.0) * logs.log_membership.sum();
        }
        terms.connectivity_prior = -((c * c) as f64) * ln_beta_fn(h.beta_a, h.beta_b)
            + (h.beta_a - 1.0) * logs.log_connectivity.sum()
            + (h.beta_b - 1.0) * logs.log1m_connectivity.sum();
        terms.influence_prior = f
            .iter()
            .map(|&v| normal_ln_pdf(v, h.influence_mean, h.influence_sd))
            .sum();
        terms.coefficient_prior = state
            .coefficients
            .iter()
            .map(|&v| normal_ln_pdf(v, h.coeff_mean, h.coeff_sd))
            .sum();

        // Row-major copies for the O(N² C) pair loop.
        let m_rows: Vec<f64> = (0..n).flat_map(|i| (0..c).map(move |k| m[(i, k)])).collect();
        let mb = m * b;
        let mb = &mb;
        let mb_rows: Vec<f64> = (0..n).flat_map(|i| (0..c).map(move |k| mb[(i, k)])).collect();

        // T = G M and U = Gᵀ M, where G_ij (i < j) is d ll / d P_ij.
        let mut t = vec![0.0; if with_gradient { n * c } else { 0 }];
        let mut u = vec![0.0; if with_gradient { n * c } else { 0 }];
        let adj = self.data.adjacency();
        let mut links = 0.0;
        for i in 0..n {
            let mb_i = &mb_rows[i * c..(i + 1) * c];
            for j in (i + 1)..n {
                let m_j = &m_rows[j * c..(j + 1) * c];
                let p: f64 = mb_i.iter().zip(m_j).map(|(a, b)| a * b).sum();
                let (ll, dp) = bernoulli_ll(p, adj.get(i, j));
                links += ll;
                if with_gradient && dp != 0.0 {
                    for k in 0..c {
                        t[i * c + k] += dp * m_j[k];
                        u[j * c + k] += dp * m_rows[i * c + k];
                    }
                }
            }
        }
        terms.links = links;

        // Outcomes.
        let agg = self.aggregate_senders(state);
        let eta = self.linear_predictor(state, &agg);
        let mut resid = vec![0.0; n];
        let mut outcomes = 0.0;
        for i in 0..n {
            if !self.observed[i] {
                continue;
            }
            let p = sigmoid(eta[i]);
            let (ll, dp) = bernoulli_ll(p, self.data.adoption()[i] == 1);
            outcomes += ll;
            // d ll / d eta = d ll / d p * p (1 - p); equals y - p when unclamped.
            resid[i] = if dp == 0.0 {
                0.0
            } else {
                f64::from(self.data.adoption()[i]) - p
            };
        }
        terms.outcomes = outcomes;

        if !with_gradient {
            return (terms, None);
        }

        let t_mat = DMatrix::from_row_slice(n, c, &t);
        let u_mat = DMatrix::from_row_slice(n, c, &u);
        let mut g_m = &t_mat * b.transpose() + &u_mat * b;
        let g_b = m.transpose() * &t_mat;

        let x = self.data.covariates();
        let mut g_beta = DVector::from_fn(state.n_covariates(), |d, _| {
            -(state.coefficients[d] - h.coeff_mean) / (h.coeff_sd * h.coeff_sd)
        });
        for i in 0..n {
            if resid[i] != 0.0 {
                for d in 0..x.ncols() {
                    g_beta[d] += resid[i] * x[(i, d)];
                }
            }
        }

        let mut g_f = f.map(|v| -(v - h.influence_mean) / (h.influence_sd * h.influence_sd));
        let w = sender_weights(self.data, self.config.awareness_mask_mode, &self.observed);
        let fm = m * f.transpose(); // row i: F M_iᵀ
        let af = DMatrix::from_row_slice(n, c, &agg) * f; // row i: agg_i F
        for i in 0..n {
            let r = resid[i];
            if r == 0.0 {
                continue;
            }
            for k in 0..c {
                let a = agg[i * c + k];
                if a != 0.0 {
                    for l in 0..c {
                        g_f[(k, l)] += r * a * m[(i, l)];
                    }
                }
                g_m[(i, k)] += r * af[(i, k)];
            }
            for &j in adj.neighbors(i) {
                if w[j] != 0.0 {
                    for k in 0..c {
                        g_m[(j, k)] += w[j] * r * fm[(i, k)];
                    }
                }
            }
        }

        (
            terms,
            Some(NaturalGradient {
                membership: g_m,
                connectivity: g_b,
                influence: g_f,
                coefficients: g_beta,
            }),
        )
    }
}

/// Log-joint density of a state with every outcome observed.
pub fn log_joint(
    state: &LatentState,
    data: &Dataset,
    hyper: &Hyperparameters,
    config: &ModelConfig,
) -> Result<f64> {
    SbimModel::new(data, *hyper, *config).log_joint(state)
}

/// Gradient of the unconstrained log-density (log-joint plus log-Jacobian).
pub fn log_joint_gradient(
    state: &UnconstrainedState,
    data: &Dataset,
    hyper: &Hyperparameters,
    config: &ModelConfig,
) -> Result<Vec<f64>> {
    let model = SbimModel::new(data, *hyper, *config);
    let (_, grad) = transform::log_density_and_gradient(&model, &state.to_vec())?;
    Ok(grad)
}

/// Draws `(M, B, F, β)` from the prior.
pub fn draw_state(
    hyper: &Hyperparameters,
    n: usize,
    c_blocks: usize,
    n_covariates: usize,
    rng: &mut impl Rng,
) -> Result<LatentState> {
    hyper.validate()?;
    if c_blocks == 0 {
        return Err(Error::Invalid("need at least one block".into()));
    }
    let gamma = Gamma::new(hyper.dirichlet_c, 1.0).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut membership = DMatrix::zeros(n, c_blocks);
    for i in 0..n {
        if c_blocks == 1 {
            membership[(i, 0)] = 1.0;
            continue;
        }
        loop {
            let draws: Vec<f64> = (0..c_blocks).map(|_| gamma.sample(rng)).collect();
            let total: f64 = draws.iter().sum();
            if total > 0.0 && total.is_finite() {
                for (k, g) in draws.iter().enumerate() {
                    membership[(i, k)] = g / total;
                }
                break;
            }
        }
    }
    let beta = Beta::new(hyper.beta_a, hyper.beta_b).map_err(|e| Error::Invalid(e.to_string()))?;
    let connectivity = DMatrix::from_fn(c_blocks, c_blocks, |_, _| {
        beta.sample(rng).clamp(f64::EPSILON, 1.0 - f64::EPSILON)
    });
    let f_dist = Normal::new(hyper.influence_mean, hyper.influence_sd)
        .map_err(|e| Error::Invalid(e.to_string()))?;
    let influence = DMatrix::from_fn(c_blocks, c_blocks, |_, _| f_dist.sample(rng));
    let b_dist =
        Normal::new(hyper.coeff_mean, hyper.coeff_sd).map_err(|e| Error::Invalid(e.to_string()))?;
    let coefficients = DVector::from_fn(n_covariates, |_, _| b_dist.sample(rng));
    Ok(LatentState {
        membership,
        connectivity,
        influence,
        coefficients,
    })
}

/// Draws a network and adoption outcomes given a latent state.
///
/// Edges are drawn for `i < j` and mirrored. Everyone is aware.
pub fn simulate_from_state(
    state: &LatentState,
    covariates: &DMatrix<f64>,
    config: &ModelConfig,
    rng: &mut impl Rng,
) -> Result<Dataset> {
    state.validate()?;
    let n = state.n_nodes();
    if covariates.nrows() != n || covariates.ncols() != state.n_covariates() {
        return Err(Error::Dimension(format!(
            "covariates are {}x{}, expected {n}x{}",
            covariates.nrows(),
            covariates.ncols(),
            state.n_covariates()
        )));
    }
    let probs = link_probabilities(state);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < probs[(i, j)] {
                edges.push((i, j));
            }
        }
    }
    let adjacency = Adjacency::from_edges(n, &edges)?;
    let network_only = Dataset::from_parts(adjacency.clone(), covariates.clone(), vec![0; n])?;
    let model = SbimModel::new(&network_only, Hyperparameters::default(), *config);
    let eta = model.linear_predictor(state, &model.aggregate_senders(state));
    let adoption = eta
        .iter()
        .map(|&e| {
            let noise = match config.noise_mode {
                NoiseMode::Zero => 0.0,
                NoiseMode::GaussianUnit => StandardNormal.sample(rng),
            };
            u8::from(rng.random::<f64>() < sigmoid(e + noise))
        })
        .collect();
    Dataset::from_parts(adjacency, covariates.clone(), adoption)
}

/// Runs the full generative process: prior draws, then links, then adoption.
pub fn simulate(
    hyper: &Hyperparameters,
    n: usize,
    c_blocks: usize,
    covariates: &DMatrix<f64>,
    config: &ModelConfig,
    seed: u64,
) -> Result<(Dataset, LatentState)> {
    if n < 2 {
        return Err(Error::Invalid("simulation needs at least two nodes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state = draw_state(hyper, n, c_blocks, covariates.ncols(), &mut rng)?;
    let data = simulate_from_state(&state, covariates, config, &mut rng)?;
    Ok((data, state))
}
