//! Observed data: the friendship network, covariates, adoption and awareness.
//!
//! A [`Dataset`] is immutable once built. Node order is fixed by sorting the
//! external identifiers (numerically when every id parses as an integer,
//! lexically otherwise) and all matrices are indexed in that order.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetric 0/1 adjacency matrix with zero diagonal.
///
/// Stores both the dense bit pattern (for O(1) lookups over all pairs) and
/// sorted neighbor lists (for sparse sums over edges).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    dense: Vec<u8>,
    neighbors: Vec<Vec<usize>>,
}

impl Adjacency {
    /// Builds an undirected adjacency from an edge list; `(i, j)` implies `(j, i)`.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut dense = vec![0u8; n * n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Invalid(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            if i == j {
                return Err(Error::Invalid(format!("self-loop on node {i}")));
            }
            dense[i * n + j] = 1;
            dense[j * n + i] = 1;
        }
        Ok(Self::from_dense_unchecked(n, dense))
    }

    /// Builds from a dense 0/1 matrix, symmetrizing it and clearing the diagonal.
    pub fn symmetrized(matrix: &DMatrix<u8>) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(Error::Dimension(format!(
                "adjacency must be square, got {}x{}",
                n,
                matrix.ncols()
            )));
        }
        let mut dense = vec![0u8; n * n];
        for i in 0..n {
            for j in 0..n {
                let v = matrix[(i, j)];
                if v > 1 {
                    return Err(Error::Invalid(format!("adjacency entry ({i}, {j}) = {v}")));
                }
                if i != j && (v == 1 || matrix[(j, i)] == 1) {
                    dense[i * n + j] = 1;
                }
            }
        }
        Ok(Self::from_dense_unchecked(n, dense))
    }

    fn from_dense_unchecked(n: usize, dense: Vec<u8>) -> Self {
        let neighbors = (0..n)
            .map(|i| (0..n).filter(|&j| dense[i * n + j] == 1).collect())
            .collect();
        Self {
            n,
            dense,
            neighbors,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.dense[i * self.n + j] == 1
    }

    /// Sorted neighbor indices of node `i`.
    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Undirected edges as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.n_edges());
        for (i, nbrs) in self.neighbors.iter().enumerate() {
            out.extend(nbrs.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<u8> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.dense[i * self.n + j])
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| f64::from(self.dense[i * self.n + j]))
    }
}

/// Per-column affine map applied by [`standardize_covariates`].
///
/// `standardized = (raw - mean) / sd`; columns with `sd == 0` were constant
/// and map to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardization {
    /// Maps standardized covariates back to the raw scale.
    pub fn invert(&self, standardized: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(standardized.nrows(), standardized.ncols(), |i, d| {
            self.means[d] + self.sds[d] * standardized[(i, d)]
        })
    }

    fn then(&self, next: &Standardization) -> Standardization {
        let means = self
            .means
            .iter()
            .zip(&self.sds)
            .zip(&next.means)
            .map(|((m1, s1), m2)| m1 + m2 * s1)
            .collect();
        let sds = self.sds.iter().zip(&next.sds).map(|(a, b)| a * b).collect();
        Standardization { means, sds }
    }
}

/// The observed network, covariates and outcomes for N individuals.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    node_ids: Vec<String>,
    covariate_names: Vec<String>,
    adjacency: Adjacency,
    covariates: DMatrix<f64>,
    adoption: Vec<u8>,
    awareness: Vec<u8>,
    standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(
        node_ids: Vec<String>,
        covariate_names: Vec<String>,
        adjacency: Adjacency,
        covariates: DMatrix<f64>,
        adoption: Vec<u8>,
        awareness: Vec<u8>,
    ) -> Result<Self> {
        let n = node_ids.len();
        if adjacency.n() != n {
            return Err(Error::Dimension(format!(
                "adjacency has {} nodes, expected {n}",
                adjacency.n()
            )));
        }
        if covariates.nrows() != n || covariates.ncols() != covariate_names.len() {
            return Err(Error::Dimension(format!(
                "covariates are {}x{}, expected {n}x{}",
                covariates.nrows(),
                covariates.ncols(),
                covariate_names.len()
            )));
        }
        if adoption.len() != n || awareness.len() != n {
            return Err(Error::Dimension(format!(
                "outcome vectors have lengths {}/{}, expected {n}",
                adoption.len(),
                awareness.len()
            )));
        }
        if let Some(i) = adoption.iter().chain(&awareness).position(|&v| v > 1) {
            return Err(Error::Invalid(format!("non-binary outcome at position {i}")));
        }
        if let Some(i) = covariates.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "covariate",
                index: i,
            });
        }
        let distinct: BTreeSet<&String> = node_ids.iter().collect();
        if distinct.len() != n {
            return Err(Error::Invalid("duplicate node ids".into()));
        }
        Ok(Self {
            node_ids,
            covariate_names,
            adjacency,
            covariates,
            adoption,
            awareness,
            standardization: None,
        })
    }

    /// Dataset with ids `0..n`, generic covariate names and all-aware individuals.
    pub fn from_parts(
        adjacency: Adjacency,
        covariates: DMatrix<f64>,
        adoption: Vec<u8>,
    ) -> Result<Self> {
        let n = adjacency.n();
        let names = (0..covariates.ncols()).map(|d| format!("x{d}")).collect();
        Self::new(
            (0..n).map(|i| i.to_string()).collect(),
            names,
            adjacency,
            covariates,
            adoption,
            vec![1; n],
        )
    }

    pub fn n(&self) -> usize {
        self.node_ids.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn adoption(&self) -> &[u8] {
        &self.adoption
    }

    pub fn awareness(&self) -> &[u8] {
        &self.awareness
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    /// Copy with awareness replaced.
    pub fn with_awareness(&self, awareness: Vec<u8>) -> Result<Self> {
        let mut out = Self::new(
            self.node_ids.clone(),
            self.covariate_names.clone(),
            self.adjacency.clone(),
            self.covariates.clone(),
            self.adoption.clone(),
            awareness,
        )?;
        out.standardization = self.standardization.clone();
        Ok(out)
    }

    /// Copy with covariates replaced (and standardization record dropped).
    pub fn with_covariates(&self, names: Vec<String>, covariates: DMatrix<f64>) -> Result<Self> {
        Self::new(
            self.node_ids.clone(),
            names,
            self.adjacency.clone(),
            covariates,
            self.adoption.clone(),
            self.awareness.clone(),
        )
    }

    /// Index of an external id.
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.node_ids.iter().position(|x| x == id)
    }
}

/// Standardizes every covariate column to mean 0 and sample sd 1.
///
/// Constant columns become all zeros. The applied transform is composed with
/// any previous one and recorded on the returned dataset.
pub fn standardize_covariates(dataset: &Dataset) -> Dataset {
    let n = dataset.n();
    let d = dataset.n_covariates();
    let x = dataset.covariates();
    let mut means = vec![0.0; d];
    let mut sds = vec![0.0; d];
    for col in 0..d {
        let column = x.column(col);
        let mean = column.iter().sum::<f64>() / n as f64;
        let ss: f64 = column.iter().map(|v| (v - mean).powi(2)).sum();
        let sd = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
        means[col] = mean;
        // Relative floor: columns whose spread is pure rounding noise are constant.
        sds[col] = if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 0.0 };
    }
    let z = DMatrix::from_fn(n, d, |i, col| {
        if sds[col] == 0.0 {
            0.0
        } else {
            (x[(i, col)] - means[col]) / sds[col]
        }
    });
    let step = Standardization { means, sds };
    let record = match dataset.standardization() {
        Some(prev) => prev.then(&step),
        None => step,
    };
    let mut out = dataset.clone();
    out.covariates = z;
    out.standardization = Some(record);
    out
}

/// Policy for empty or `NA` covariate cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    #[default]
    Reject,
    Fill(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestOptions {
    /// Whether the edge file starts with a `src,dst` header row.
    pub edge_header: bool,
    pub missing: MissingPolicy,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            edge_header: true,
            missing: MissingPolicy::Reject,
        }
    }
}

fn sort_ids(ids: &mut [String]) {
    if ids.iter().all(|s| s.parse::<i64>().is_ok()) {
        ids.sort_by_key(|s| s.parse::<i64>().unwrap_or_default());
    } else {
        ids.sort();
    }
}

fn reader(path: &Path, has_headers: bool) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(has_headers)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn record_line(record: &csv::StringRecord) -> usize {
    record.position().map_or(0, |p| p.line() as usize)
}

fn parse_binary(path: &Path, line: usize, column: &str, raw: &str) -> Result<u8> {
    match raw {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::ingest(
            path,
            line,
            format!("column '{column}': expected 0 or 1, found '{other}'"),
        )),
    }
}

/// Loads and validates a dataset from edge, covariate and outcome CSVs.
pub fn load_dataset(
    edge_file: &Path,
    covariate_file: &Path,
    outcome_file: &Path,
    options: &IngestOptions,
) -> Result<Dataset> {
    // Covariates define the node set.
    let mut cov_reader = reader(covariate_file, true)?;
    let header = cov_reader.headers()?.clone();
    if header.get(0) != Some("id") {
        return Err(Error::ingest(covariate_file, 1, "first column must be 'id'"));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let mut raw_rows: HashMap<String, Vec<f64>> = HashMap::new();
    for record in cov_reader.records() {
        let record = record?;
        let line = record_line(&record);
        if record.len() != names.len() + 1 {
            return Err(Error::ingest(
                covariate_file,
                line,
                format!("expected {} fields, found {}", names.len() + 1, record.len()),
            ));
        }
        let id = record[0].to_owned();
        let mut values = Vec::with_capacity(names.len());
        for (col, cell) in record.iter().skip(1).enumerate() {
            let value = if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
                match options.missing {
                    MissingPolicy::Reject => {
                        return Err(Error::ingest(
                            covariate_file,
                            line,
                            format!("missing value in column '{}'", names[col]),
                        ))
                    }
                    MissingPolicy::Fill(v) => v,
                }
            } else {
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => v,
                    _ => {
                        return Err(Error::ingest(
                            covariate_file,
                            line,
                            format!("column '{}': cannot parse '{cell}' as a number", names[col]),
                        ))
                    }
                }
            };
            values.push(value);
        }
        if raw_rows.insert(id.clone(), values).is_some() {
            return Err(Error::ingest(covariate_file, line, format!("duplicate node id '{id}'")));
        }
    }
    let mut node_ids: Vec<String> = raw_rows.keys().cloned().collect();
    sort_ids(&mut node_ids);
    let index: HashMap<&str, usize> = node_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let n = node_ids.len();
    let d = names.len();
    let covariates = DMatrix::from_fn(n, d, |i, col| raw_rows[&node_ids[i]][col]);

    let mut edges = Vec::new();
    let mut edge_reader = reader(edge_file, options.edge_header)?;
    for record in edge_reader.records() {
        let record = record?;
        let line = record_line(&record);
        if record.len() != 2 {
            return Err(Error::ingest(
                edge_file,
                line,
                format!("expected 2 fields, found {}", record.len()),
            ));
        }
        let lookup = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::ingest(edge_file, line, format!("unknown node id '{id}'")))
        };
        let (i, j) = (lookup(&record[0])?, lookup(&record[1])?);
        if i == j {
            return Err(Error::ingest(edge_file, line, format!("self-loop on '{}'", &record[0])));
        }
        edges.push((i, j));
    }
    let adjacency = Adjacency::from_edges(n, &edges)?;

    let mut out_reader = reader(outcome_file, true)?;
    let out_header = out_reader.headers()?.clone();
    let has_aware = match out_header.len() {
        2 => false,
        3 => true,
        k => {
            return Err(Error::ingest(
                outcome_file,
                1,
                format!("expected columns id,adopted[,aware], found {k}"),
            ))
        }
    };
    let mut adoption: Vec<Option<u8>> = vec![None; n];
    let mut awareness = vec![1u8; n];
    for record in out_reader.records() {
        let record = record?;
        let line = record_line(&record);
        if record.len() != out_header.len() {
            return Err(Error::ingest(
                outcome_file,
                line,
                format!("expected {} fields, found {}", out_header.len(), record.len()),
            ));
        }
        let i = *index.get(&record[0]).ok_or_else(|| {
            Error::ingest(outcome_file, line, format!("unknown node id '{}'", &record[0]))
        })?;
        if adoption[i].is_some() {
            return Err(Error::ingest(
                outcome_file,
                line,
                format!("duplicate node id '{}'", &record[0]),
            ));
        }
        adoption[i] = Some(parse_binary(outcome_file, line, "adopted", &record[1])?);
        if has_aware {
            awareness[i] = parse_binary(outcome_file, line, "aware", &record[2])?;
        }
    }
    let adoption = adoption
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            v.ok_or_else(|| {
                Error::ingest(outcome_file, 0, format!("no outcome for node id '{}'", node_ids[i]))
            })
        })
        .collect::<Result<Vec<u8>>>()?;

    Dataset::new(node_ids, names, adjacency, covariates, adoption, awareness)
}

/// Writes `edges.csv`, `covariates.csv` and `outcomes.csv` into `dir`.
///
/// The edge file carries a `src,dst` header; reload with the default
/// [`IngestOptions`].
pub fn write_dataset_csvs(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ids = dataset.node_ids();

    let mut w = csv_writer(&dir.join("edges.csv"))?;
    w.write_record(["src", "dst"])?;
    for (i, j) in dataset.adjacency().edges() {
        w.write_record([&ids[i], &ids[j]])?;
    }
    flush(w, &dir.join("edges.csv"))?;

    let mut w = csv_writer(&dir.join("covariates.csv"))?;
    let mut header = vec!["id".to_owned()];
    header.extend(dataset.covariate_names().iter().cloned());
    w.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(dataset.covariates().row(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    flush(w, &dir.join("covariates.csv"))?;

    let mut w = csv_writer(&dir.join("outcomes.csv"))?;
    w.write_record(["id", "adopted", "aware"])?;
    for (i, id) in ids.iter().enumerate() {
        w.write_record([
            id.clone(),
            dataset.adoption()[i].to_string(),
            dataset.awareness()[i].to_string(),
        ])?;
    }
    flush(w, &dir.join("outcomes.csv"))
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub(crate) fn flush(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// On-disk form of a [`Dataset`]. Field order is the serialized order.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    schema_version: u32,
    n: usize,
    node_ids: Vec<String>,
    covariate_names: Vec<String>,
    /// Row-major N x D.
    covariates: Vec<Vec<f64>>,
    /// Undirected edges as index pairs `i < j`.
    edges: Vec<(usize, usize)>,
    adoption: Vec<u8>,
    awareness: Vec<u8>,
    standardization: Option<Standardization>,
}

/// Serializes a dataset to a single versioned JSON document.
pub fn dataset_to_json(dataset: &Dataset) -> Result<String> {
    let file = DatasetFile {
        schema_version: DATASET_SCHEMA_VERSION,
        n: dataset.n(),
        node_ids: dataset.node_ids.clone(),
        covariate_names: dataset.covariate_names.clone(),
        covariates: (0..dataset.n())
            .map(|i| dataset.covariates.row(i).iter().copied().collect())
            .collect(),
        edges: dataset.adjacency.edges(),
        adoption: dataset.adoption.clone(),
        awareness: dataset.awareness.clone(),
        standardization: dataset.standardization.clone(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn dataset_from_json(text: &str) -> Result<Dataset> {
    let file: DatasetFile = serde_json::from_str(text)?;
    if file.schema_version != DATASET_SCHEMA_VERSION {
        return Err(Error::Invalid(format!(
            "unsupported dataset schema version {}",
            file.schema_version
        )));
    }
    let d = file.covariate_names.len();
    if file.covariates.len() != file.n || file.covariates.iter().any(|r| r.len() != d) {
        return Err(Error::Dimension("covariate rows do not match n x d".into()));
    }
    let covariates = DMatrix::from_fn(file.n, d, |i, col| file.covariates[i][col]);
    let adjacency = Adjacency::from_edges(file.n, &file.edges)?;
    let mut ds = Dataset::new(
        file.node_ids,
        file.covariate_names,
        adjacency,
        covariates,
        file.adoption,
        file.awareness,
    )?;
    ds.standardization = file.standardization;
    Ok(ds)
}
