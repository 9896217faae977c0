//! Posterior inference: reparameterization, NUTS, and point estimates.

pub mod adapt;
pub mod nuts;
pub mod transform;

use std::fs;
use std::path::Path;

use itertools::Itertools;
use log::info;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{csv_writer, flush, Dataset};
use crate::error::{Error, Result};
use crate::latent::{write_latent_state, Hyperparameters, LatentState};
use crate::model::{ModelConfig, SbimModel};
pub use nuts::{ChainOutput, DrawStats, LogDensity, SamplerConfig};
pub use transform::{inverse_transform, transform, Layout, UnconstrainedState};

/// The SBIM posterior in unconstrained coordinates, as a sampler target.
pub struct Posterior<'a> {
    model: SbimModel<'a>,
    layout: Layout,
}

impl<'a> Posterior<'a> {
    pub fn new(model: SbimModel<'a>, n_blocks: usize) -> Result<Self> {
        if n_blocks == 0 {
            return Err(Error::Invalid("need at least one block".into()));
        }
        model.hyper().validate()?;
        let layout = Layout::new(model.data().n(), n_blocks, model.data().n_covariates());
        Ok(Self { model, layout })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn model(&self) -> &SbimModel<'a> {
        &self.model
    }

    pub fn log_density(&self, flat: &[f64]) -> Result<f64> {
        transform::log_density(&self.model, flat)
    }
}

impl LogDensity for Posterior<'_> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        transform::density_and_gradient_into(&self.model, self.layout, x, grad)
    }
}

/// Posterior draws, point estimate and sampler diagnostics.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Constrained draws, one vector per chain.
    pub samples: Vec<Vec<LatentState>>,
    pub point_estimate: LatentState,
    /// Divergent post-burn-in transitions across all chains.
    pub n_divergent: usize,
    pub warmup_divergent: usize,
    /// Mean acceptance statistic over post-burn-in transitions.
    pub mean_accept: f64,
    /// Mean adapted step size across chains.
    pub step_size: f64,
    pub chain_step_sizes: Vec<f64>,
    pub stats: Vec<Vec<DrawStats>>,
    /// Largest split-R̂ over aligned connectivity, influence and coefficients.
    pub max_rhat: f64,
}

impl FitResult {
    pub fn n_draws(&self) -> usize {
        self.samples.iter().map(Vec::len).sum()
    }

    pub fn divergent_fraction(&self) -> f64 {
        self.n_divergent as f64 / self.n_draws().max(1) as f64
    }

    pub fn diagnostics(&self) -> FitDiagnostics {
        let depths: Vec<f64> = self.stats.iter().flatten().map(|s| s.tree_depth as f64).collect();
        FitDiagnostics {
            n_chains: self.samples.len(),
            n_draws: self.n_draws(),
            n_divergent: self.n_divergent,
            divergent_fraction: self.divergent_fraction(),
            warmup_divergent: self.warmup_divergent,
            mean_accept: self.mean_accept,
            step_size: self.step_size,
            chain_step_sizes: self.chain_step_sizes.clone(),
            mean_tree_depth: crate::math::mean(&depths),
            max_rhat: self.max_rhat.is_finite().then_some(self.max_rhat),
        }
    }

    /// Writes the point estimate to `dir/estimate`, the draws and per-draw
    /// sampler statistics as CSVs, and `diagnostics.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_latent_state(&self.point_estimate, &dir.join(ESTIMATE_DIR))?;
        let first = &self.point_estimate;
        let (n, c, d) = (first.n_nodes(), first.n_blocks(), first.n_covariates());
        type Extract = fn(&LatentState) -> Vec<f64>;
        let groups: [(&str, Vec<String>, Extract); 4] = [
            (
                "samples_membership.csv",
                (0..n).flat_map(|i| (0..c).map(move |k| format!("m_{i}_{k}"))).collect(),
                |s| s.membership.transpose().as_slice().to_vec(),
            ),
            (
                "samples_connectivity.csv",
                (0..c).flat_map(|k| (0..c).map(move |l| format!("b_{k}_{l}"))).collect(),
                |s| s.connectivity.transpose().as_slice().to_vec(),
            ),
            (
                "samples_influence.csv",
                (0..c).flat_map(|k| (0..c).map(move |l| format!("f_{k}_{l}"))).collect(),
                |s| s.influence.transpose().as_slice().to_vec(),
            ),
            (
                "samples_coefficients.csv",
                (0..d).map(|j| format!("beta_{j}")).collect(),
                |s| s.coefficients.as_slice().to_vec(),
            ),
        ];
        for (file, names, extract) in groups {
            let path = dir.join(file);
            let mut w = csv_writer(&path)?;
            let mut header = vec!["chain".to_string(), "draw".to_string()];
            header.extend(names);
            w.write_record(&header)?;
            for (ci, chain) in self.samples.iter().enumerate() {
                for (di, s) in chain.iter().enumerate() {
                    let mut rec = vec![ci.to_string(), di.to_string()];
                    rec.extend(extract(s).iter().map(f64::to_string));
                    w.write_record(&rec)?;
                }
            }
            flush(w, &path)?;
        }
        let path = dir.join("draw_stats.csv");
        let mut w = csv_writer(&path)?;
        w.write_record(["chain", "draw", "accept_stat", "diverging", "tree_depth", "n_leapfrog", "energy", "step_size"])?;
        for (ci, chain) in self.stats.iter().enumerate() {
            for (di, st) in chain.iter().enumerate() {
                w.write_record([
                    ci.to_string(),
                    di.to_string(),
                    st.accept_stat.to_string(),
                    u8::from(st.diverging).to_string(),
                    st.tree_depth.to_string(),
                    st.n_leapfrog.to_string(),
                    st.energy.to_string(),
                    st.step_size.to_string(),
                ])?;
            }
        }
        flush(w, &path)?;
        let path = dir.join(DIAGNOSTICS_FILE);
        fs::write(&path, serde_json::to_string_pretty(&self.diagnostics())? + "\n").map_err(|e| Error::io(&path, e))
    }
}

/// Subdirectory of a fit directory holding the point estimate.
pub const ESTIMATE_DIR: &str = "estimate";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";

/// Sampler summary written alongside a fit.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FitDiagnostics {
    pub n_chains: usize,
    pub n_draws: usize,
    pub n_divergent: usize,
    pub divergent_fraction: f64,
    pub warmup_divergent: usize,
    pub mean_accept: f64,
    pub step_size: f64,
    pub chain_step_sizes: Vec<f64>,
    pub mean_tree_depth: f64,
    /// Absent when too few draws to compute it.
    pub max_rhat: Option<f64>,
}

/// Samples the posterior with every outcome observed.
pub fn nuts_sample(
    data: &Dataset,
    hyper: &Hyperparameters,
    config: &ModelConfig,
    n_blocks: usize,
    sampler: &SamplerConfig,
) -> Result<FitResult> {
    let model = SbimModel::new(data, *hyper, *config);
    fit_model(model, n_blocks, sampler)
}

/// Samples the posterior of `model` and summarizes it.
pub fn fit_model(model: SbimModel<'_>, n_blocks: usize, sampler: &SamplerConfig) -> Result<FitResult> {
    let posterior = Posterior::new(model, n_blocks)?;
    let layout = posterior.layout();
    info!(
        "sampling {} chains over {} parameters (N = {}, C = {n_blocks}, D = {})",
        sampler.n_chains,
        layout.dim(),
        layout.n_nodes,
        layout.n_covariates
    );
    let chains = nuts::sample(&posterior, sampler)?;
    let samples: Vec<Vec<LatentState>> = chains
        .par_iter()
        .map(|chain| chain.draws.iter().map(|d| transform::forward(layout, d).state).collect())
        .collect();
    let stats: Vec<Vec<DrawStats>> = chains.iter().map(|c| c.stats.clone()).collect();
    let n_divergent = stats.iter().flatten().filter(|s| s.diverging).count();
    let all: Vec<f64> = stats.iter().flatten().map(|s| s.accept_stat).collect();
    let mean_accept = crate::math::mean(&all);
    let chain_step_sizes: Vec<f64> = chains.iter().map(|c| c.step_size).collect();
    let step_size = crate::math::mean(&chain_step_sizes);
    let (point_estimate, aligned) = align_and_average(&samples)?;
    let max_rhat = max_split_rhat(&aligned);
    info!(
        "done: {n_divergent} divergent of {} draws, mean accept {mean_accept:.3}, step {step_size:.4e}, max R-hat {max_rhat:.3}",
        all.len()
    );
    Ok(FitResult {
        samples,
        point_estimate,
        n_divergent,
        warmup_divergent: chains.iter().map(|c| c.warmup_divergences).sum(),
        mean_accept,
        step_size,
        chain_step_sizes,
        stats,
        max_rhat,
    })
}

/// Block permutation of `sample` that best matches `reference`.
///
/// Similarity is `Σ_i M_ref[i, k] M[i, perm[k]]`. All permutations are tried
/// for up to 8 blocks; beyond that, pairs are matched greedily by similarity.
pub fn align_blocks(reference: &DMatrix<f64>, sample: &DMatrix<f64>) -> Vec<usize> {
    let c = reference.ncols();
    let sim = reference.transpose() * sample;
    if c <= 8 {
        let mut best = (f64::NEG_INFINITY, (0..c).collect::<Vec<_>>());
        for perm in (0..c).permutations(c) {
            let score: f64 = perm.iter().enumerate().map(|(k, &l)| sim[(k, l)]).sum();
            if score > best.0 {
                best = (score, perm);
            }
        }
        return best.1;
    }
    let mut perm = vec![usize::MAX; c];
    let mut used_ref = vec![false; c];
    let mut used_sample = vec![false; c];
    for _ in 0..c {
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for k in (0..c).filter(|&k| !used_ref[k]) {
            for l in (0..c).filter(|&l| !used_sample[l]) {
                if sim[(k, l)] > best.0 {
                    best = (sim[(k, l)], k, l);
                }
            }
        }
        perm[best.1] = best.2;
        used_ref[best.1] = true;
        used_sample[best.2] = true;
    }
    perm
}

fn align_and_average(samples: &[Vec<LatentState>]) -> Result<(LatentState, Vec<Vec<LatentState>>)> {
    let reference = samples
        .iter()
        .flatten()
        .next()
        .ok_or_else(|| Error::Invalid("no samples to summarize".into()))?
        .membership
        .clone();
    let aligned: Vec<Vec<LatentState>> = samples
        .par_iter()
        .map(|chain| {
            chain
                .iter()
                .map(|s| s.permute_blocks(&align_blocks(&reference, &s.membership)))
                .collect()
        })
        .collect();
    let first = &aligned.iter().flatten().next().expect("non-empty");
    let count = aligned.iter().map(Vec::len).sum::<usize>() as f64;
    let mut m = DMatrix::zeros(first.n_nodes(), first.n_blocks());
    let mut b = DMatrix::zeros(first.n_blocks(), first.n_blocks());
    let mut f = DMatrix::zeros(first.n_blocks(), first.n_blocks());
    let mut beta = DVector::zeros(first.n_covariates());
    for s in aligned.iter().flatten() {
        m += &s.membership;
        b += &s.connectivity;
        f += &s.influence;
        beta += &s.coefficients;
    }
    m /= count;
    for mut row in m.row_iter_mut() {
        let total = row.sum();
        row /= total;
    }
    let estimate = LatentState {
        membership: m,
        connectivity: b / count,
        influence: f / count,
        coefficients: beta / count,
    };
    Ok((estimate, aligned))
}

/// Coordinate-wise mean of label-aligned draws, with membership rows
/// renormalized onto the simplex.
pub fn point_estimate(samples: &[Vec<LatentState>]) -> Result<LatentState> {
    Ok(align_and_average(samples)?.0)
}

/// Split-R̂ of one scalar across chains.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let halves: Vec<&[f64]> = chains
        .iter()
        .filter(|c| c.len() >= 4)
        .flat_map(|c| {
            let h = c.len() / 2;
            [&c[..h], &c[c.len() - h..]]
        })
        .collect();
    if halves.len() < 2 {
        return f64::NAN;
    }
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| crate::math::mean(h)).collect();
    let within = halves
        .iter()
        .map(|h| crate::math::sample_sd(h).powi(2))
        .sum::<f64>()
        / halves.len() as f64;
    let between = n * crate::math::sample_sd(&means).powi(2);
    if within == 0.0 {
        return if between == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * within + between / n;
    (var_plus / within).sqrt()
}

fn max_split_rhat(aligned: &[Vec<LatentState>]) -> f64 {
    let Some(first) = aligned.iter().flatten().next() else {
        return f64::NAN;
    };
    let c = first.n_blocks();
    type Extractor = Box<dyn Fn(&LatentState) -> f64 + Sync>;
    let mut extractors: Vec<Extractor> = Vec::new();
    for k in 0..c {
        for l in 0..c {
            extractors.push(Box::new(move |s: &LatentState| s.connectivity[(k, l)]));
            extractors.push(Box::new(move |s: &LatentState| s.influence[(k, l)]));
        }
    }
    for d in 0..first.n_covariates() {
        extractors.push(Box::new(move |s: &LatentState| s.coefficients[d]));
    }
    extractors
        .par_iter()
        .map(|f| {
            let chains: Vec<Vec<f64>> = aligned.iter().map(|ch| ch.iter().map(f).collect()).collect();
            split_rhat(&chains)
        })
        .filter(|r| r.is_finite())
        .reduce(|| f64::NAN, |a, b| if a.is_nan() || b > a { b } else { a })
}

/// Fit with held-out outcomes and predictions for every node.
#[derive(Debug, Clone)]
pub struct FitPrediction {
    pub fit: FitResult,
    /// Predicted adoption probability for every node, from the point estimate.
    pub all: Vec<f64>,
    /// Predictions for the requested test nodes, in the order given.
    pub test: Vec<f64>,
}

/// Fits with the outcomes of `test_nodes` masked (links stay observed), then
/// predicts those nodes with the point estimate.
pub fn fit_predict(
    data: &Dataset,
    test_nodes: &[usize],
    hyper: &Hyperparameters,
    config: &ModelConfig,
    n_blocks: usize,
    sampler: &SamplerConfig,
) -> Result<FitPrediction> {
    if test_nodes.is_empty() {
        return Err(Error::Invalid("empty test set".into()));
    }
    let mut observed = vec![true; data.n()];
    for &i in test_nodes {
        if i >= data.n() {
            return Err(Error::Invalid(format!("test node {i} out of range")));
        }
        observed[i] = false;
    }
    let model = SbimModel::new(data, *hyper, *config).with_observed(observed)?;
    let fit = fit_model(model.clone(), n_blocks, sampler)?;
    let all = model.predict(&fit.point_estimate);
    let test = test_nodes.iter().map(|&i| all[i]).collect();
    Ok(FitPrediction { fit, all, test })
}
