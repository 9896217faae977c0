//! Run directories and their manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, RunConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: PathBuf,
    /// Resolved configuration, identical to the echoed `config.toml`.
    pub config: RunConfig,
    /// SHA-256 of every file in the run directory except this manifest,
    /// keyed by `/`-separated relative path.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }
}

pub(crate) fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Validation(format!("{}: {e}", path.display()))
}

/// Creates the run directory, refusing to reuse a nonempty one.
pub fn create_run_dir(out: &Path) -> Result<(), CliError> {
    if out.exists() {
        let mut entries = fs::read_dir(out).map_err(|e| io_err(out, e))?;
        if entries.next().is_some() {
            return Err(CliError::Validation(format!(
                "run directory {} already exists and is not empty",
                out.display()
            )));
        }
    }
    fs::create_dir_all(out).map_err(|e| io_err(out, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn collect(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<(), CliError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| io_err(dir, err)))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect(root, &path, out)?;
            continue;
        }
        let rel = path.strip_prefix(root).expect("inside root");
        let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        if key == MANIFEST_FILE {
            continue;
        }
        let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
        out.insert(key, sha256_hex(&bytes));
    }
    Ok(())
}

/// Hashes of every artifact under `root`.
pub fn hash_tree(root: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    collect(root, root, &mut out)?;
    Ok(out)
}

/// Echoes the config without machine-specific fields, hashes the directory
/// and writes the manifest.
pub fn finish_run(command: &str, cfg: &RunConfig, out: &Path) -> Result<Manifest, CliError> {
    let mut echoed = cfg.clone();
    echoed.out = None;
    echoed.threads = None;
    let path = out.join(CONFIG_FILE);
    fs::write(&path, echoed.to_toml()?).map_err(|e| io_err(&path, e))?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        seed: cfg.seed,
        threads: cfg.threads,
        out: out.to_path_buf(),
        config: echoed,
        artifacts: hash_tree(out)?,
    };
    let path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Validation(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
    Ok(manifest)
}
