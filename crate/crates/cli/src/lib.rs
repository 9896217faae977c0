//! `sbim` command-line pipelines: simulate, fit, evaluate, tune and analyze.
//!
//! Each invocation writes into its own run directory, echoes the resolved
//! configuration as `config.toml` and records a `manifest.json` with SHA-256
//! hashes of every artifact.
//!
//! Exit codes: 0 success, 2 validation error, 3 numerical failure.

pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::RunConfig;
pub use manifest::Manifest;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
    #[error(transparent)]
    Core(#[from] sbim::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sbim", version, about = "Stochastic block influence model pipelines")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Run directory; must not exist or be empty.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Draw a synthetic dataset and its ground-truth latent state.
    Simulate,
    /// Sample the posterior and write draws, point estimate and diagnostics.
    Fit,
    /// Repeated train/test comparison against the baseline over a block-count grid.
    Evaluate,
    /// Search prior hyperparameters.
    Tune,
    /// Summaries and exports of a saved fit.
    Analyze,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fit => "fit",
            Command::Evaluate => "evaluate",
            Command::Tune => "tune",
            Command::Analyze => "analyze",
        }
    }
}

/// Applies file values, then flag overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    if cli.out.is_some() {
        cfg.out.clone_from(&cli.out);
    }
    cfg.sampler.seed = cfg.seed;
    if cfg.threads == Some(0) {
        return Err(CliError::Validation("--threads must be positive".into()));
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<Manifest, CliError> {
    let cfg = resolve_config(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Validation(format!("cannot start thread pool: {e}")))?;
    pool.install(|| commands::dispatch(cli.command, &cfg))
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
