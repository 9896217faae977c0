//! Latent variables, hyperparameters and block summaries.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{csv_writer, flush};
use crate::error::{Error, Result};

/// Hidden variables of the model in their natural (constrained) space.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    /// N x C, each row on the probability simplex.
    pub membership: DMatrix<f64>,
    /// C x C block connection probabilities, entries in (0, 1).
    pub connectivity: DMatrix<f64>,
    /// C x C block-to-block influence; entry (k, l) is the pull of block k on block l.
    pub influence: DMatrix<f64>,
    /// Covariate coefficients, length D.
    pub coefficients: DVector<f64>,
}

impl LatentState {
    pub fn n_nodes(&self) -> usize {
        self.membership.nrows()
    }

    pub fn n_blocks(&self) -> usize {
        self.membership.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.coefficients.len()
    }

    /// Checks the simplex, range and finiteness invariants.
    pub fn validate(&self) -> Result<()> {
        let c = self.n_blocks();
        if c == 0 {
            return Err(Error::Invalid("state has zero blocks".into()));
        }
        if self.connectivity.shape() != (c, c) || self.influence.shape() != (c, c) {
            return Err(Error::Dimension(format!(
                "block matrices must be {c}x{c}, got {:?} and {:?}",
                self.connectivity.shape(),
                self.influence.shape()
            )));
        }
        for (i, row) in self.membership.row_iter().enumerate() {
            if row.iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::Invalid(format!("membership row {i} has a negative entry")));
            }
            let s: f64 = row.sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Invalid(format!("membership row {i} sums to {s}")));
            }
        }
        if let Some(i) = self.connectivity.iter().position(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::Invalid(format!(
                "connectivity entry {i} outside (0, 1)"
            )));
        }
        if let Some(i) = self.influence.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "influence",
                index: i,
            });
        }
        if let Some(i) = self.coefficients.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "coefficient",
                index: i,
            });
        }
        Ok(())
    }

    /// Relabels blocks so that new block `k` is old block `perm[k]`.
    pub fn permute_blocks(&self, perm: &[usize]) -> LatentState {
        let c = self.n_blocks();
        assert_eq!(perm.len(), c, "permutation length must equal block count");
        LatentState {
            membership: DMatrix::from_fn(self.n_nodes(), c, |i, k| self.membership[(i, perm[k])]),
            connectivity: DMatrix::from_fn(c, c, |k, l| self.connectivity[(perm[k], perm[l])]),
            influence: DMatrix::from_fn(c, c, |k, l| self.influence[(perm[k], perm[l])]),
            coefficients: self.coefficients.clone(),
        }
    }
}

/// Prior hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    /// Symmetric Dirichlet concentration for membership rows.
    pub dirichlet_c: f64,
    pub beta_a: f64,
    pub beta_b: f64,
    pub influence_mean: f64,
    pub influence_sd: f64,
    pub coeff_mean: f64,
    pub coeff_sd: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            dirichlet_c: 1.0,
            beta_a: 2.0,
            beta_b: 2.0,
            influence_mean: 0.0,
            influence_sd: 1.0,
            coeff_mean: 0.0,
            coeff_sd: 1.0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dirichlet_c", self.dirichlet_c),
            ("beta_a", self.beta_a),
            ("beta_b", self.beta_b),
            ("influence_sd", self.influence_sd),
            ("coeff_sd", self.coeff_sd),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("influence_mean", self.influence_mean),
            ("coeff_mean", self.coeff_mean),
        ] {
            if !v.is_finite() {
                return Err(Error::Invalid(format!("{name} must be finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// Hard-assignment block sizes and proportions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub sizes: Vec<usize>,
    pub proportions: Vec<f64>,
}

impl BlockStats {
    pub fn from_labels(labels: &[usize], n_blocks: usize) -> Self {
        let mut sizes = vec![0usize; n_blocks];
        for &l in labels {
            sizes[l] += 1;
        }
        let n = labels.len().max(1) as f64;
        let proportions = sizes.iter().map(|&s| s as f64 / n).collect();
        Self { sizes, proportions }
    }
}

/// Row-wise argmax of a membership matrix; ties go to the lowest block index.
pub fn hard_assignments(membership: &DMatrix<f64>) -> Vec<usize> {
    membership
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

pub const LATENT_SCHEMA_VERSION: u32 = 1;

/// Manifest written next to the per-component CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentManifest {
    pub schema_version: u32,
    pub n_nodes: usize,
    pub n_blocks: usize,
    pub n_covariates: usize,
    pub membership_file: String,
    pub connectivity_file: String,
    pub influence_file: String,
    pub coefficients_file: String,
}

pub const MEMBERSHIP_FILE: &str = "membership.csv";
pub const CONNECTIVITY_FILE: &str = "connectivity.csv";
pub const INFLUENCE_FILE: &str = "influence.csv";
pub const COEFFICIENTS_FILE: &str = "coefficients.csv";
pub const LATENT_MANIFEST_FILE: &str = "latent.json";

fn block_header(c: usize) -> Vec<String> {
    (0..c).map(|k| format!("block_{k}")).collect()
}

pub(crate) fn write_matrix_csv(path: &Path, header: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    flush(w, path)
}

pub(crate) fn read_matrix_csv(path: &Path, ncols: usize) -> Result<DMatrix<f64>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let mut data = Vec::new();
    let mut rows = 0;
    for record in r.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != ncols {
            return Err(Error::ingest(
                path,
                line,
                format!("expected {ncols} fields, found {}", record.len()),
            ));
        }
        for cell in record.iter() {
            data.push(cell.parse::<f64>().map_err(|_| {
                Error::ingest(path, line, format!("cannot parse '{cell}' as a number"))
            })?);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, ncols, &data))
}

/// Writes the four component CSVs plus `latent.json` into `dir`.
pub fn write_latent_state(state: &LatentState, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let c = state.n_blocks();
    let header = block_header(c);
    write_matrix_csv(&dir.join(MEMBERSHIP_FILE), &header, &state.membership)?;
    write_matrix_csv(&dir.join(CONNECTIVITY_FILE), &header, &state.connectivity)?;
    write_matrix_csv(&dir.join(INFLUENCE_FILE), &header, &state.influence)?;
    let beta = DMatrix::from_column_slice(state.n_covariates(), 1, state.coefficients.as_slice());
    write_matrix_csv(&dir.join(COEFFICIENTS_FILE), &["coefficient".to_owned()], &beta)?;
    let manifest = LatentManifest {
        schema_version: LATENT_SCHEMA_VERSION,
        n_nodes: state.n_nodes(),
        n_blocks: c,
        n_covariates: state.n_covariates(),
        membership_file: MEMBERSHIP_FILE.into(),
        connectivity_file: CONNECTIVITY_FILE.into(),
        influence_file: INFLUENCE_FILE.into(),
        coefficients_file: COEFFICIENTS_FILE.into(),
    };
    let path = dir.join(LATENT_MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_latent_state(dir: &Path) -> Result<LatentState> {
    let path = dir.join(LATENT_MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: LatentManifest = serde_json::from_str(&text)?;
    if manifest.schema_version != LATENT_SCHEMA_VERSION {
        return Err(Error::Invalid(format!(
            "unsupported latent schema version {}",
            manifest.schema_version
        )));
    }
    let c = manifest.n_blocks;
    let membership = read_matrix_csv(&dir.join(&manifest.membership_file), c)?;
    let connectivity = read_matrix_csv(&dir.join(&manifest.connectivity_file), c)?;
    let influence = read_matrix_csv(&dir.join(&manifest.influence_file), c)?;
    let beta = read_matrix_csv(&dir.join(&manifest.coefficients_file), 1)?;
    if membership.nrows() != manifest.n_nodes
        || connectivity.nrows() != c
        || influence.nrows() != c
        || beta.nrows() != manifest.n_covariates
    {
        return Err(Error::Dimension("latent CSV row counts disagree with manifest".into()));
    }
    let state = LatentState {
        membership,
        connectivity,
        influence,
        coefficients: DVector::from_column_slice(beta.as_slice()),
    };
    state.validate()?;
    Ok(state)
}
