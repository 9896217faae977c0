//! Metrics, repeated train/test evaluation against the baseline, and block-count
//! selection.

pub mod tune;

use std::fmt::Write as _;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_pipeline, BaselineConfig};
use crate::data::{csv_writer, flush, Dataset};
use crate::error::{Error, Result};
use crate::inference::{fit_predict, SamplerConfig};
use crate::latent::Hyperparameters;
use crate::math::{mean, sample_sd};
use crate::model::ModelConfig;
pub use tune::{evaluation_draws, full_resource_cost, hyperband_tune, LeaderboardEntry, TuneConfig, TuneMode, TuneResult};

/// Rank-based (Mann–Whitney) AUC; tied scores get average ranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(index) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite { what: "score", index });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Invalid("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Ranks start..end (0-based) share their 1-based average.
        let avg = (start + end + 1) as f64 / 2.0;
        rank_sum_pos += avg * order[start..end].iter().filter(|&&i| labels[i]).count() as f64;
        start = end;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// `L = (baseline - sbim) / (1 - baseline)`; negative values mean SBIM wins.
pub fn improvement_loss(baseline_auc: f64, sbim_auc: f64) -> Result<f64> {
    if baseline_auc >= 1.0 {
        return Err(Error::Invalid("improvement loss is undefined for a baseline AUC of 1".into()));
    }
    Ok((baseline_auc - sbim_auc) / (1.0 - baseline_auc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_repeats: usize,
    pub train_fraction: f64,
    /// Redraws allowed when a split leaves one side with a single class.
    pub max_split_retries: usize,
    pub model: ModelConfig,
    pub sampler: SamplerConfig,
    pub baseline: BaselineConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_repeats: 10,
            train_fraction: 0.75,
            max_split_retries: 100,
            model: ModelConfig::default(),
            sampler: SamplerConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_repeats == 0 {
            return Err(Error::Invalid("n_repeats must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Invalid("train_fraction must lie in (0, 1)".into()));
        }
        self.sampler.validate()
    }
}

/// Node indices of one train/test split, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles the nodes and cuts at `round(fraction * n)`, redrawing until both
/// sides contain both outcome classes.
pub fn draw_split(data: &Dataset, fraction: f64, max_retries: usize, rng: &mut impl RngCore) -> Result<Split> {
    let n = data.n();
    let n_train = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1));
    let y = data.adoption();
    let both = |idx: &[usize]| idx.iter().any(|&i| y[i] == 1) && idx.iter().any(|&i| y[i] == 0);
    let mut nodes: Vec<usize> = (0..n).collect();
    for _ in 0..=max_retries {
        nodes.shuffle(rng);
        let (mut train, mut test) = (nodes[..n_train].to_vec(), nodes[n_train..].to_vec());
        if both(&train) && both(&test) {
            train.sort_unstable();
            test.sort_unstable();
            return Ok(Split { train, test });
        }
    }
    Err(Error::Invalid(format!(
        "no split with both outcome classes on each side after {max_retries} retries"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub repeat: usize,
    pub seed: u64,
    pub baseline_train_auc: f64,
    pub sbim_train_auc: f64,
    pub baseline_test_auc: f64,
    pub sbim_test_auc: f64,
    /// NaN when the baseline test AUC is 1.
    pub loss: f64,
    pub n_divergent: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
        Self {
            mean: mean(&v),
            sd: sample_sd(&v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub baseline_train_auc: MeanSd,
    pub sbim_train_auc: MeanSd,
    pub baseline_test_auc: MeanSd,
    pub sbim_test_auc: MeanSd,
    /// Over repeats with a finite loss.
    pub loss: MeanSd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_blocks: usize,
    pub per_repeat: Vec<RepeatResult>,
    pub aggregate: Aggregate,
}

impl EvalReport {
    pub fn from_repeats(n_blocks: usize, per_repeat: Vec<RepeatResult>) -> Self {
        let col = |f: fn(&RepeatResult) -> f64| MeanSd::of(per_repeat.iter().map(f));
        let aggregate = Aggregate {
            baseline_train_auc: col(|r| r.baseline_train_auc),
            sbim_train_auc: col(|r| r.sbim_train_auc),
            baseline_test_auc: col(|r| r.baseline_test_auc),
            sbim_test_auc: col(|r| r.sbim_test_auc),
            loss: col(|r| r.loss),
        };
        Self {
            n_blocks,
            per_repeat,
            aggregate,
        }
    }

    /// The four AUC statistics as `(label, mean, sd)`.
    pub fn summary_rows(&self) -> [(&'static str, MeanSd); 4] {
        let a = &self.aggregate;
        [
            ("Baseline train AUC", a.baseline_train_auc),
            ("SBIM train AUC", a.sbim_train_auc),
            ("Baseline test AUC", a.baseline_test_auc),
            ("SBIM test AUC", a.sbim_test_auc),
        ]
    }

    /// Plain-text table of the AUC statistics plus the mean loss.
    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<20} {:>8} {:>10}", "", "Mean", "Std. dev.");
        for (label, v) in self.summary_rows() {
            let _ = writeln!(s, "{label:<20} {:>8.3} {:>10.3}", v.mean, v.sd);
        }
        let l = self.aggregate.loss;
        let _ = writeln!(s, "improvement loss L = {:.4} (sd {:.4}, C = {})", l.mean, l.sd, self.n_blocks);
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record([
            "repeat",
            "seed",
            "baseline_train_auc",
            "sbim_train_auc",
            "baseline_test_auc",
            "sbim_test_auc",
            "loss",
            "n_divergent",
        ])?;
        for r in &self.per_repeat {
            w.write_record([
                r.repeat.to_string(),
                r.seed.to_string(),
                r.baseline_train_auc.to_string(),
                r.sbim_train_auc.to_string(),
                r.baseline_test_auc.to_string(),
                r.sbim_test_auc.to_string(),
                r.loss.to_string(),
                r.n_divergent.to_string(),
            ])?;
        }
        flush(w, path)
    }

    /// `statistic,mean,sd` with one row per AUC statistic.
    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["statistic", "mean", "sd"])?;
        for (label, v) in self.summary_rows() {
            w.write_record([label.to_string(), v.mean.to_string(), v.sd.to_string()])?;
        }
        flush(w, path)
    }
}

fn evaluate_repeat(
    data: &Dataset,
    c: usize,
    hyper: &Hyperparameters,
    config: &EvalConfig,
    seed: u64,
    repeat: usize,
) -> Result<RepeatResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(repeat as u64);
    let split = draw_split(data, config.train_fraction, config.max_split_retries, &mut rng)?;
    let run_seed = rng.next_u64();
    let sampler = SamplerConfig {
        seed: run_seed,
        ..config.sampler
    };
    let fitted = fit_predict(data, &split.test, hyper, &config.model, c, &sampler)?;
    let base = baseline_pipeline(data, c, &split.train, &split.test, &config.baseline, run_seed)?;
    let labels = |idx: &[usize]| -> Vec<bool> { idx.iter().map(|&i| data.adoption()[i] == 1).collect() };
    let (y_train, y_test) = (labels(&split.train), labels(&split.test));
    let sbim_train: Vec<f64> = split.train.iter().map(|&i| fitted.all[i]).collect();
    let baseline_test_auc = auc(&base.test, &y_test)?;
    let sbim_test_auc = auc(&fitted.test, &y_test)?;
    let result = RepeatResult {
        repeat,
        seed: run_seed,
        baseline_train_auc: auc(&base.train, &y_train)?,
        sbim_train_auc: auc(&sbim_train, &y_train)?,
        baseline_test_auc,
        sbim_test_auc,
        loss: improvement_loss(baseline_test_auc, sbim_test_auc).unwrap_or(f64::NAN),
        n_divergent: fitted.fit.n_divergent,
    };
    info!(
        "C = {c}, repeat {repeat}: baseline test AUC {:.3}, SBIM test AUC {:.3}, L = {:.4}",
        result.baseline_test_auc, result.sbim_test_auc, result.loss
    );
    Ok(result)
}

/// Repeated random train/test evaluation of SBIM against the baseline on
/// identical splits. Only outcomes are held out; the network stays observed.
pub fn cross_validate(
    data: &Dataset,
    c: usize,
    hyper: &Hyperparameters,
    config: &EvalConfig,
    seed: u64,
) -> Result<EvalReport> {
    config.validate()?;
    if data.n() < 8 {
        return Err(Error::Invalid("evaluation needs at least 8 nodes".into()));
    }
    let per_repeat = (0..config.n_repeats)
        .into_par_iter()
        .map(|r| evaluate_repeat(data, c, hyper, config, seed, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_repeats(c, per_repeat))
}

/// Paper grid of block counts.
pub const DEFAULT_BLOCK_GRID: [usize; 4] = [2, 6, 10, 14];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSelection {
    pub best: usize,
    /// One report per grid element, in ascending `C`.
    pub reports: Vec<EvalReport>,
}

/// Index of the smallest finite loss; ties and NaNs resolve to the earlier entry.
pub(crate) fn argmin_loss(losses: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &l) in losses.iter().enumerate() {
        if l.is_finite() && best.is_none_or(|b| l < losses[b]) {
            best = Some(i);
        }
    }
    best
}

/// Evaluates each block count and returns the one with the lowest mean
/// improvement loss (ties go to the smaller count).
pub fn select_block_count(
    data: &Dataset,
    grid: &[usize],
    hyper: &Hyperparameters,
    config: &EvalConfig,
    seed: u64,
) -> Result<BlockSelection> {
    let mut grid = grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    if grid.is_empty() {
        return Err(Error::Invalid("empty block-count grid".into()));
    }
    let reports = grid
        .iter()
        .map(|&c| cross_validate(data, c, hyper, config, seed))
        .collect::<Result<Vec<_>>>()?;
    let losses: Vec<f64> = reports.iter().map(|r| r.aggregate.loss.mean).collect();
    let best = grid[argmin_loss(&losses).unwrap_or(0)];
    Ok(BlockSelection { best, reports })
}
