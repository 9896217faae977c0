//! Subcommand bodies. Each writes into a fresh run directory and finishes by
//! writing `config.toml` and `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use sbim::analysis::{analyze, export_block_graph, write_sorted_adjacency_csv};
use sbim::data::{load_dataset, standardize_covariates, write_dataset_csvs};
use sbim::evaluation::{hyperband_tune, select_block_count};
use sbim::inference::{nuts_sample, ESTIMATE_DIR};
use sbim::latent::{read_latent_state, write_latent_state};
use sbim::model::{draw_state, predict, simulate_from_state};
use sbim::{Dataset, Hyperparameters};

use crate::config::{DataConfig, RunConfig};
use crate::manifest::{create_run_dir, finish_run, io_err, CONFIG_FILE};
use crate::{CliError, Command, Manifest};

pub const DATA_DIR: &str = "data";
pub const TRUTH_DIR: &str = "truth";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

pub fn dispatch(command: Command, cfg: &RunConfig) -> Result<Manifest, CliError> {
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Validation("no run directory: pass --out or set `out`".into()))?;
    // Load inputs before touching the run directory so a bad config leaves nothing behind.
    let outcome = match command {
        Command::Simulate => {
            create_run_dir(&out)?;
            simulate(cfg, &out)
        }
        Command::Fit => {
            let data = load(&cfg.data)?;
            create_run_dir(&out)?;
            fit(cfg, &data, &out)
        }
        Command::Evaluate => {
            let data = load(&cfg.data)?;
            create_run_dir(&out)?;
            evaluate(cfg, &data, &out)
        }
        Command::Tune => {
            let data = load(&cfg.data)?;
            create_run_dir(&out)?;
            tune(cfg, &data, &out)
        }
        Command::Analyze => {
            let (data, fit_dir) = analysis_inputs(cfg)?;
            create_run_dir(&out)?;
            analyze_fit(cfg, &data, &fit_dir, &out)
        }
    };
    match outcome {
        Ok(()) => finish_run(command.name(), cfg, &out),
        Err(e @ CliError::Numerical(_)) => {
            // Outputs are kept for inspection.
            finish_run(command.name(), cfg, &out)?;
            Err(e)
        }
        Err(e) => Err(e),
    }
}

pub fn load(data: &DataConfig) -> Result<Dataset, CliError> {
    let (edges, covariates, outcomes) = data.files()?;
    let ds = load_dataset(&edges, &covariates, &outcomes, &data.ingest)?;
    info!(
        "loaded {} nodes, {} edges, {} covariates",
        ds.n(),
        ds.adjacency().n_edges(),
        ds.n_covariates()
    );
    Ok(if data.standardize { standardize_covariates(&ds) } else { ds })
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Validation(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let sim = &cfg.simulate;
    if sim.n_nodes < 2 || sim.n_blocks == 0 {
        return Err(CliError::Validation("[simulate] needs n_nodes >= 2 and n_blocks >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x = DMatrix::from_fn(sim.n_nodes, sim.n_covariates, |_, _| StandardNormal.sample(&mut rng));
    let mut state = draw_state(&cfg.hyper, sim.n_nodes, sim.n_blocks, sim.n_covariates, &mut rng)?;
    if let Some([within, between]) = sim.planted_connectivity {
        if !(within > 0.0 && within < 1.0 && between > 0.0 && between < 1.0) {
            return Err(CliError::Validation("planted_connectivity entries must lie in (0, 1)".into()));
        }
        state.connectivity = DMatrix::from_fn(sim.n_blocks, sim.n_blocks, |k, l| if k == l { within } else { between });
    }
    let data = simulate_from_state(&state, &x, &cfg.model, &mut rng)?;
    let adopters = data.adoption().iter().filter(|&&a| a == 1).count();
    info!(
        "simulated {} nodes, {} edges, {adopters} adopters",
        data.n(),
        data.adjacency().n_edges()
    );
    write_dataset_csvs(&data, &out.join(DATA_DIR))?;
    write_latent_state(&state, &out.join(TRUTH_DIR))?;
    Ok(())
}

fn fit(cfg: &RunConfig, data: &Dataset, out: &Path) -> Result<(), CliError> {
    let c = cfg.fit.n_blocks;
    let result = nuts_sample(data, &cfg.hyper, &cfg.model, c, &cfg.sampler)?;
    result.write(out)?;
    let probs = predict(&result.point_estimate, data, &cfg.model);
    let path = out.join(PREDICTIONS_FILE);
    let mut text = String::from("id,adopted,probability\n");
    for (i, id) in data.node_ids().iter().enumerate() {
        text.push_str(&format!("{id},{},{}\n", data.adoption()[i], probs[i]));
    }
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;

    let d = result.diagnostics();
    info!(
        "{} draws, {} divergent, mean accept {:.3}, step size {:.4}",
        d.n_draws, d.n_divergent, d.mean_accept, d.step_size
    );
    if d.divergent_fraction > cfg.fit.max_divergent_fraction {
        return Err(CliError::Numerical(format!(
            "divergent fraction {:.3} exceeds the ceiling {}",
            d.divergent_fraction, cfg.fit.max_divergent_fraction
        )));
    }
    if let Some(r) = d.max_rhat {
        if r > 1.1 {
            warn!("max split R-hat {r:.3}");
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Selection {
    best: usize,
    grid: Vec<usize>,
    mean_loss: Vec<f64>,
}

fn evaluate(cfg: &RunConfig, data: &Dataset, out: &Path) -> Result<(), CliError> {
    let eval = cfg.eval_config();
    let selection = select_block_count(data, &cfg.evaluate.grid, &cfg.hyper, &eval, cfg.seed)?;
    let reports = out.join("reports");
    fs::create_dir_all(&reports).map_err(|e| io_err(&reports, e))?;
    let mut summary = String::new();
    for report in &selection.reports {
        let c = report.n_blocks;
        report.write_csv(&reports.join(format!("repeats_C{c}.csv")))?;
        report.write_summary_csv(&reports.join(format!("summary_C{c}.csv")))?;
        summary.push_str(&format!("C = {c}\n{}\n", report.summary_table()));
    }
    summary.push_str(&format!("selected C = {}\n", selection.best));
    print!("{summary}");
    let path = out.join("summary.txt");
    fs::write(&path, summary).map_err(|e| io_err(&path, e))?;
    write_json(
        &Selection {
            best: selection.best,
            grid: selection.reports.iter().map(|r| r.n_blocks).collect(),
            mean_loss: selection.reports.iter().map(|r| r.aggregate.loss.mean).collect(),
        },
        &out.join("selection.json"),
    )?;
    write_json(&selection, &out.join("evaluation.json"))
}

#[derive(Serialize)]
struct BestHyper<'a> {
    hyper: &'a Hyperparameters,
}

fn tune(cfg: &RunConfig, data: &Dataset, out: &Path) -> Result<(), CliError> {
    let eval = cfg.eval_config();
    let result = hyperband_tune(data, cfg.tune.n_blocks, &cfg.tune.search, &eval, cfg.seed)?;
    result.write_leaderboard_csv(&out.join("leaderboard.csv"))?;
    let text = toml::to_string(&BestHyper { hyper: &result.best })
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let path = out.join("best_hyper.toml");
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    info!(
        "best loss {:.4} after {} sampler iterations",
        result.best_entry.loss, result.total_draws
    );
    print!("{}", result.best_report.summary_table());
    write_json(&result, &out.join("tune.json"))
}

/// Dataset and fit directory for `analyze`. Without a `[data]` section the
/// data source recorded by the fit run is used.
fn analysis_inputs(cfg: &RunConfig) -> Result<(Dataset, PathBuf), CliError> {
    let fit_dir = cfg
        .analyze
        .fit
        .clone()
        .ok_or_else(|| CliError::Validation("[analyze] needs `fit`, the run directory of a fit".into()))?;
    let estimate = fit_dir.join(ESTIMATE_DIR);
    if !estimate.is_dir() {
        return Err(CliError::Validation(format!(
            "{} has no {ESTIMATE_DIR}/ directory; is it a fit run?",
            fit_dir.display()
        )));
    }
    let data_cfg = if cfg.data.is_empty() {
        RunConfig::load(&fit_dir.join(CONFIG_FILE))?.data
    } else {
        cfg.data.clone()
    };
    // Profiles are reported on the raw covariate scale.
    let raw = DataConfig {
        standardize: false,
        ..data_cfg
    };
    Ok((load(&raw)?, fit_dir))
}

fn analyze_fit(cfg: &RunConfig, data: &Dataset, fit_dir: &Path, out: &Path) -> Result<(), CliError> {
    let state = read_latent_state(&fit_dir.join(ESTIMATE_DIR))?;
    if state.n_nodes() != data.n() {
        return Err(CliError::Validation(format!(
            "fit has {} nodes but the dataset has {}",
            state.n_nodes(),
            data.n()
        )));
    }
    let report = analyze(data, &state, &cfg.analyze.schema)?;
    report.write_json(&out.join("analysis.json"))?;
    report.write_influence_csv(&out.join("influence_sorted.csv"))?;
    let annotation = cfg.analyze.annotate.as_deref().map(|s| (s, report.profiles.as_slice()));
    export_block_graph(
        &report.flows,
        &report.block_stats(),
        annotation,
        cfg.analyze.min_edge_weight,
        &out.join("blocks.dot"),
    )?;
    let (sorted, perm) = sbim::analysis::sorted_adjacency(data, &state.membership)?;
    write_sorted_adjacency_csv(data, &sorted, &perm, &out.join("sorted_adjacency.csv"))?;
    Ok(())
}
