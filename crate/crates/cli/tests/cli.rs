use std::fs;
use std::path::Path;

use sbim_cli::{main_with_args, Manifest};

fn sbim(args: &[&str]) -> i32 {
    let mut full = vec!["sbim"];
    full.extend_from_slice(args);
    main_with_args(full)
}

const SMALL: &str = "
[simulate]
n_nodes = 30
n_blocks = 2
planted_connectivity = [0.3, 0.05]
[hyper]
influence_sd = 0.3
[sampler]
n_burnin = 60
n_samples = 30
n_chains = 2
[fit]
n_blocks = 2
[evaluate]
n_repeats = 2
grid = [3, 2, 2]
[tune]
n_blocks = 2
[tune.search]
n_configs = 3
mode = \"halving\"
";

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, format!("{extra}{SMALL}")).unwrap();
    path.display().to_string()
}

fn simulated(dir: &Path) -> String {
    let cfg = write_config(dir, "");
    let sim = dir.join("sim");
    assert_eq!(sbim(&["simulate", "--config", &cfg, "--seed", "2", "--out", sim.to_str().unwrap()]), 0);
    sim.join("data").display().to_string()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(sbim(&["--help"]), 0);
    assert_eq!(sbim(&["frobnicate"]), 2);
    assert_eq!(sbim(&["simulate"]), 2, "missing --out");
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[fit]\nblocks = 3\n").unwrap();
    let cfg = cfg.display().to_string();
    let out = dir.path().join("out");
    assert_eq!(sbim(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]), 2);
    assert!(!out.exists(), "nothing is written for a bad config");
}

#[test]
fn run_directories_are_not_reused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("sim");
    let out = out.to_str().unwrap();
    assert_eq!(sbim(&["simulate", "--config", &cfg, "--out", out]), 0);
    assert_eq!(sbim(&["simulate", "--config", &cfg, "--out", out]), 2);
}

#[test]
fn flags_override_file_and_manifest_hashes_match() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 5\n");
    let out = dir.path().join("sim");
    assert_eq!(
        sbim(&["simulate", "--config", &cfg, "--seed", "9", "--threads", "1", "--out", out.to_str().unwrap()]),
        0
    );
    let m = Manifest::load(&out.join("manifest.json")).unwrap();
    assert_eq!(m.seed, 9);
    assert_eq!(m.config.seed, 9);
    assert_eq!(m.threads, Some(1));
    assert_eq!(m.command, "simulate");
    let echoed = sbim_cli::RunConfig::load(&out.join("config.toml")).unwrap();
    assert_eq!(echoed, m.config);
    for name in ["data/edges.csv", "data/covariates.csv", "data/outcomes.csv", "truth/latent.json", "config.toml"] {
        let bytes = fs::read(out.join(name)).unwrap();
        assert_eq!(m.artifacts[name], sbim_cli::manifest::sha256_hex(&bytes), "{name}");
    }
}

#[test]
fn divergent_fit_exits_with_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path());
    let cfg = write_config(dir.path(), &format!("[data]\ndir = \"{data}\"\n"));
    // An energy-error threshold this small flags nearly every transition.
    let text = fs::read_to_string(&cfg).unwrap().replace("n_chains = 2", "n_chains = 2\nmax_energy_error = 1e-9");
    fs::write(&cfg, text).unwrap();
    let out = dir.path().join("fit");
    assert_eq!(sbim(&["fit", "--config", &cfg, "--out", out.to_str().unwrap()]), 3);
}

#[test]
fn fit_then_analyze_without_data_section() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path());
    let fit_dir = dir.path().join("fit");
    let cfg = write_config(dir.path(), &format!("[data]\ndir = \"{data}\"\n"));
    assert_eq!(sbim(&["fit", "--config", &cfg, "--out", fit_dir.to_str().unwrap()]), 0);
    let preds = fs::read_to_string(fit_dir.join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 31);

    let acfg = dir.path().join("analyze.toml");
    fs::write(
        &acfg,
        format!("[analyze]\nfit = \"{}\"\nannotate = \"x1\"\n[analyze.schema]\nnumeric = [\"x1\"]\n", fit_dir.display()),
    )
    .unwrap();
    let out = dir.path().join("analysis");
    assert_eq!(sbim(&["analyze", "--config", acfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
    let dot = fs::read_to_string(out.join("blocks.dot")).unwrap();
    assert!(dot.starts_with("digraph blocks {") && dot.contains("x1 = "));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("analysis.json")).unwrap()).unwrap();
    assert_eq!(report["n_nodes"], 30);
    assert_eq!(fs::read_to_string(out.join("sorted_adjacency.csv")).unwrap().lines().count(), 31);

    // Not a fit directory.
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, format!("[analyze]\nfit = \"{}\"\n", dir.path().join("sim").display())).unwrap();
    let out2 = dir.path().join("analysis2");
    assert_eq!(sbim(&["analyze", "--config", bad.to_str().unwrap(), "--out", out2.to_str().unwrap()]), 2);
}

#[test]
fn evaluate_and_tune_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path());
    let cfg = write_config(dir.path(), &format!("[data]\ndir = \"{data}\"\n"));

    let out = dir.path().join("eval");
    assert_eq!(sbim(&["evaluate", "--config", &cfg, "--out", out.to_str().unwrap()]), 0);
    for name in ["reports/repeats_C2.csv", "reports/summary_C3.csv", "summary.txt", "selection.json", "evaluation.json"] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let sel: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("selection.json")).unwrap()).unwrap();
    assert_eq!(sel["grid"], serde_json::json!([2, 3]));
    assert!(sel["best"] == 2 || sel["best"] == 3);

    let out = dir.path().join("tune");
    assert_eq!(sbim(&["tune", "--config", &cfg, "--out", out.to_str().unwrap()]), 0);
    let best = fs::read_to_string(out.join("best_hyper.toml")).unwrap();
    let parsed = sbim_cli::RunConfig::from_toml(&best).unwrap();
    assert!(parsed.hyper.influence_sd >= 0.1 && parsed.hyper.influence_sd <= 3.0);
    let board = fs::read_to_string(out.join("leaderboard.csv")).unwrap();
    assert!(board.lines().count() >= 4);
}
