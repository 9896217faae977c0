//! TOML run configuration. Every section rejects unknown keys.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sbim::analysis::AttributeSchema;
use sbim::baselines::BaselineConfig;
use sbim::data::IngestOptions;
use sbim::evaluation::{TuneConfig, DEFAULT_BLOCK_GRID};
use sbim::inference::SamplerConfig;
use sbim::{Hyperparameters, ModelConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; also used as the sampler seed.
    pub seed: u64,
    /// Worker threads; unset means available parallelism.
    pub threads: Option<usize>,
    /// Run directory.
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub hyper: Hyperparameters,
    pub model: ModelConfig,
    pub sampler: SamplerConfig,
    pub baseline: BaselineConfig,
    pub simulate: SimulateConfig,
    pub fit: FitConfig,
    pub evaluate: EvaluateConfig,
    pub tune: TuneSection,
    pub analyze: AnalyzeConfig,
}

/// Where to read a dataset from: either `dir` holding `edges.csv`,
/// `covariates.csv` and `outcomes.csv`, or the three files individually.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dir: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    pub outcomes: Option<PathBuf>,
    pub ingest: IngestOptions,
    /// Z-score covariates after loading.
    pub standardize: bool,
}

impl DataConfig {
    pub fn is_empty(&self) -> bool {
        self.dir.is_none() && self.edges.is_none() && self.covariates.is_none() && self.outcomes.is_none()
    }

    pub fn files(&self) -> Result<(PathBuf, PathBuf, PathBuf), CliError> {
        match (&self.dir, &self.edges, &self.covariates, &self.outcomes) {
            (Some(d), None, None, None) => Ok((d.join("edges.csv"), d.join("covariates.csv"), d.join("outcomes.csv"))),
            (None, Some(e), Some(c), Some(o)) => Ok((e.clone(), c.clone(), o.clone())),
            (None, None, None, None) => Err(CliError::Validation("no [data] source configured".into())),
            _ => Err(CliError::Validation(
                "[data] needs either `dir` alone or all of `edges`, `covariates` and `outcomes`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub n_nodes: usize,
    pub n_blocks: usize,
    /// Covariates are drawn i.i.d. standard normal.
    pub n_covariates: usize,
    /// Replace the drawn connectivity with `within` on the diagonal and
    /// `between` elsewhere.
    pub planted_connectivity: Option<[f64; 2]>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            n_nodes: 150,
            n_blocks: 4,
            n_covariates: 2,
            planted_connectivity: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub n_blocks: usize,
    /// Exit with a numerical failure above this post-burn-in divergent fraction.
    pub max_divergent_fraction: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_blocks: 10,
            max_divergent_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub n_repeats: usize,
    pub train_fraction: f64,
    pub max_split_retries: usize,
    pub grid: Vec<usize>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            n_repeats: 10,
            train_fraction: 0.75,
            max_split_retries: 100,
            grid: DEFAULT_BLOCK_GRID.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSection {
    pub n_blocks: usize,
    pub search: TuneConfig,
}

impl Default for TuneSection {
    fn default() -> Self {
        Self {
            n_blocks: 10,
            search: TuneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// Run directory of a previous `fit`.
    pub fit: Option<PathBuf>,
    pub schema: AttributeSchema,
    /// Profile statistic shown on the DOT nodes.
    pub annotate: Option<String>,
    /// Influence entries with `|F| <= min_edge_weight` are left out of the graph.
    pub min_edge_weight: f64,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Validation(format!("cannot serialize config: {e}")))
    }

    pub fn eval_config(&self) -> sbim::evaluation::EvalConfig {
        sbim::evaluation::EvalConfig {
            n_repeats: self.evaluate.n_repeats,
            train_fraction: self.evaluate.train_fraction,
            max_split_retries: self.evaluate.max_split_retries,
            model: self.model,
            sampler: self.sampler,
            baseline: self.baseline,
        }
    }
}
