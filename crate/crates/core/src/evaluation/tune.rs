//! Random-search hyperparameter tuning with optional successive halving.

use std::path::Path;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmin_loss, cross_validate, EvalConfig, EvalReport};
use crate::data::{csv_writer, flush, Dataset};
use crate::error::{Error, Result};
use crate::latent::Hyperparameters;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneMode {
    /// Every configuration runs with the full sampler budget.
    #[default]
    FullResource,
    /// Successive halving on the post-burn-in sample count.
    Halving,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneConfig {
    pub coeff_mean: [f64; 2],
    pub coeff_sd: [f64; 2],
    pub dirichlet_c: [f64; 2],
    pub influence_mean: [f64; 2],
    pub influence_sd: [f64; 2],
    pub beta_a: f64,
    pub beta_b: f64,
    pub n_configs: usize,
    pub mode: TuneMode,
    pub eta: usize,
    /// Largest post-burn-in sample count; defaults to the sampler's `n_samples`.
    pub max_resource: Option<usize>,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            coeff_mean: [-2.0, 2.0],
            coeff_sd: [0.01, 1.0],
            dirichlet_c: [0.5, 1.5],
            influence_mean: [-6.0, 6.0],
            influence_sd: [0.1, 3.0],
            beta_a: 2.0,
            beta_b: 2.0,
            n_configs: 9,
            mode: TuneMode::FullResource,
            eta: 3,
            max_resource: None,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("coeff_mean", self.coeff_mean),
            ("coeff_sd", self.coeff_sd),
            ("dirichlet_c", self.dirichlet_c),
            ("influence_mean", self.influence_mean),
            ("influence_sd", self.influence_sd),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Invalid(format!("range {name} = [{lo}, {hi}] is not ordered")));
            }
        }
        for (name, [lo, _]) in &ranges[1..] {
            if name != &"influence_mean" && *lo <= 0.0 {
                return Err(Error::Invalid(format!("range {name} must be strictly positive")));
            }
        }
        if self.n_configs == 0 {
            return Err(Error::Invalid("tuning needs at least one configuration".into()));
        }
        if self.eta < 2 {
            return Err(Error::Invalid("eta must be at least 2".into()));
        }
        if self.max_resource == Some(0) {
            return Err(Error::Invalid("max_resource must be positive".into()));
        }
        Ok(())
    }

    pub fn contains(&self, h: &Hyperparameters) -> bool {
        let within = |v: f64, [lo, hi]: [f64; 2]| lo <= v && v <= hi;
        within(h.coeff_mean, self.coeff_mean)
            && within(h.coeff_sd, self.coeff_sd)
            && within(h.dirichlet_c, self.dirichlet_c)
            && within(h.influence_mean, self.influence_mean)
            && within(h.influence_sd, self.influence_sd)
            && h.beta_a == self.beta_a
            && h.beta_b == self.beta_b
    }

    /// Draws `n_configs` configurations uniformly from the ranges.
    pub fn sample_configs(&self, seed: u64) -> Vec<Hyperparameters> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |[lo, hi]: [f64; 2]| if lo == hi { lo } else { rng.random_range(lo..=hi) };
        (0..self.n_configs)
            .map(|_| Hyperparameters {
                dirichlet_c: draw(self.dirichlet_c),
                beta_a: self.beta_a,
                beta_b: self.beta_b,
                influence_mean: draw(self.influence_mean),
                influence_sd: draw(self.influence_sd),
                coeff_mean: draw(self.coeff_mean),
                coeff_sd: draw(self.coeff_sd),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub config: usize,
    pub round: usize,
    pub hyper: Hyperparameters,
    pub n_burnin: usize,
    pub n_samples: usize,
    /// Seed passed to the evaluation; re-running with it reproduces `loss`.
    pub seed: u64,
    pub loss: f64,
    pub loss_sd: f64,
    /// Sampler iterations spent, over chains and repeats.
    pub draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: Hyperparameters,
    pub best_entry: LeaderboardEntry,
    pub best_report: EvalReport,
    /// Every evaluation, ascending by loss (NaN last).
    pub leaderboard: Vec<LeaderboardEntry>,
    pub total_draws: usize,
}

impl TuneResult {
    pub fn write_leaderboard_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record([
            "config",
            "round",
            "dirichlet_c",
            "beta_a",
            "beta_b",
            "influence_mean",
            "influence_sd",
            "coeff_mean",
            "coeff_sd",
            "n_burnin",
            "n_samples",
            "seed",
            "loss",
            "loss_sd",
            "draws",
        ])?;
        for e in &self.leaderboard {
            let h = &e.hyper;
            w.write_record([
                e.config.to_string(),
                e.round.to_string(),
                h.dirichlet_c.to_string(),
                h.beta_a.to_string(),
                h.beta_b.to_string(),
                h.influence_mean.to_string(),
                h.influence_sd.to_string(),
                h.coeff_mean.to_string(),
                h.coeff_sd.to_string(),
                e.n_burnin.to_string(),
                e.n_samples.to_string(),
                e.seed.to_string(),
                e.loss.to_string(),
                e.loss_sd.to_string(),
                e.draws.to_string(),
            ])?;
        }
        flush(w, path)
    }
}

/// Sampler iterations of one evaluation at the given budget.
pub fn evaluation_draws(eval: &EvalConfig, n_burnin: usize, n_samples: usize) -> usize {
    (n_burnin + n_samples) * eval.sampler.n_chains * eval.n_repeats
}

/// Cost of evaluating `n_configs` configurations at the full budget.
pub fn full_resource_cost(n_configs: usize, eval: &EvalConfig) -> usize {
    n_configs * evaluation_draws(eval, eval.sampler.n_burnin, eval.sampler.n_samples)
}

/// Budget `(n_burnin, n_samples)` for `n_samples`, keeping the burn-in share.
fn budget(eval: &EvalConfig, n_samples: usize, max_resource: usize) -> (usize, usize) {
    let burnin = (eval.sampler.n_burnin as u128 * n_samples as u128 / max_resource as u128) as usize;
    (burnin.max(1), n_samples)
}

struct Evaluated {
    entry: LeaderboardEntry,
    report: EvalReport,
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    data: &Dataset,
    c: usize,
    eval: &EvalConfig,
    seed: u64,
    config: usize,
    round: usize,
    hyper: &Hyperparameters,
    (n_burnin, n_samples): (usize, usize),
) -> Result<Evaluated> {
    let mut cfg = eval.clone();
    cfg.sampler.n_burnin = n_burnin;
    cfg.sampler.n_samples = n_samples;
    let report = cross_validate(data, c, hyper, &cfg, seed)?;
    let entry = LeaderboardEntry {
        config,
        round,
        hyper: *hyper,
        n_burnin,
        n_samples,
        seed,
        loss: report.aggregate.loss.mean,
        loss_sd: report.aggregate.loss.sd,
        draws: evaluation_draws(&cfg, n_burnin, n_samples),
    };
    info!(
        "config {config} round {round} ({n_samples} samples): loss {:.4}",
        entry.loss
    );
    Ok(Evaluated { entry, report })
}

/// Samples configurations from `tune` and evaluates them with
/// [`cross_validate`] at `c` blocks. All evaluations share `seed`, so every
/// configuration sees the same splits.
///
/// In halving mode, with `s = floor(log_eta(n))` rounds after the first, round
/// `i` runs `floor(n / eta^i)` configurations at `R eta^(i - s)` samples (burn-in
/// scaled alike) and keeps the best `1 / eta`. The total cost is then at most
/// `(s + 1) eta^-s` times the full-resource cost, which is never more than 1.
pub fn hyperband_tune(
    data: &Dataset,
    c: usize,
    tune: &TuneConfig,
    eval: &EvalConfig,
    seed: u64,
) -> Result<TuneResult> {
    tune.validate()?;
    eval.validate()?;
    let configs = tune.sample_configs(seed);
    let max_r = tune.max_resource.unwrap_or(eval.sampler.n_samples);
    let mut evaluated: Vec<Evaluated> = Vec::new();
    let winner = match tune.mode {
        TuneMode::FullResource => {
            let full = budget(eval, max_r, max_r);
            evaluated = configs
                .par_iter()
                .enumerate()
                .map(|(i, h)| evaluate(data, c, eval, seed, i, 0, h, full))
                .collect::<Result<_>>()?;
            let losses: Vec<f64> = evaluated.iter().map(|e| e.entry.loss).collect();
            argmin_loss(&losses).unwrap_or(0)
        }
        TuneMode::Halving => {
            let eta = tune.eta;
            let n = configs.len();
            let mut s = 0u32;
            while eta.pow(s + 1) <= n {
                s += 1;
            }
            let mut alive: Vec<usize> = (0..n).collect();
            let mut last_round = Vec::new();
            for round in 0..=s {
                let r = (max_r as f64 * (eta as f64).powi(round as i32 - s as i32)).floor() as usize;
                let b = budget(eval, r.max(1), max_r);
                let results: Vec<Evaluated> = alive
                    .par_iter()
                    .map(|&i| evaluate(data, c, eval, seed, i, round as usize, &configs[i], b))
                    .collect::<Result<_>>()?;
                let keep = (n / eta.pow(round + 1)).max(1);
                let mut ranked: Vec<usize> = (0..results.len()).collect();
                ranked.sort_by(|&a, &b| loss_order(results[a].entry.loss, results[b].entry.loss).then(a.cmp(&b)));
                alive = ranked.iter().take(keep).map(|&k| results[k].entry.config).collect();
                alive.sort_unstable();
                let offset = evaluated.len();
                last_round = ranked.iter().map(|&k| offset + k).collect();
                evaluated.extend(results);
            }
            last_round[0]
        }
    };
    let total_draws = evaluated.iter().map(|e| e.entry.draws).sum();
    let best_entry = evaluated[winner].entry.clone();
    let best_report = evaluated[winner].report.clone();
    let mut leaderboard: Vec<LeaderboardEntry> = evaluated.into_iter().map(|e| e.entry).collect();
    leaderboard.sort_by(|a, b| {
        loss_order(a.loss, b.loss)
            .then(b.round.cmp(&a.round))
            .then(a.config.cmp(&b.config))
    });
    Ok(TuneResult {
        best: best_entry.hyper,
        best_entry,
        best_report,
        leaderboard,
        total_draws,
    })
}

/// Ascending with NaN last.
fn loss_order(a: f64, b: f64) -> std::cmp::Ordering {
    match (a.is_nan(), b.is_nan()) {
        (false, false) => a.total_cmp(&b),
        (a_nan, b_nan) => a_nan.cmp(&b_nan),
    }
}
