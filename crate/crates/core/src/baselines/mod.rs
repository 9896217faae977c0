//! Comparison pipeline: spectral communities as features for a standard classifier.

pub mod forest;
pub mod logistic;
pub mod spectral;

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{csv_writer, flush, Dataset};
use crate::error::{Error, Result};
pub use forest::{train_random_forest, ForestConfig, RandomForest};
pub use logistic::{train_logistic, LogisticConfig, LogisticModel};
pub use spectral::{kmeans, spectral_cluster, spectral_embedding, ClusterAssignment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    #[default]
    RandomForest,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub classifier: ClassifierKind,
    pub forest: ForestConfig,
    pub logistic: LogisticConfig,
}

/// A trained baseline classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Classifier {
    RandomForest(RandomForest),
    Logistic(LogisticModel),
}

impl Classifier {
    pub fn train(features: &DMatrix<f64>, labels: &[bool], config: &BaselineConfig, seed: u64) -> Result<Self> {
        Ok(match config.classifier {
            ClassifierKind::RandomForest => {
                Classifier::RandomForest(train_random_forest(features, labels, &config.forest, seed)?)
            }
            ClassifierKind::Logistic => Classifier::Logistic(train_logistic(features, labels, &config.logistic)?),
        })
    }

    pub fn predict_proba(&self, features: &DMatrix<f64>) -> Result<Vec<f64>> {
        match self {
            Classifier::RandomForest(f) => f.predict_proba(features),
            Classifier::Logistic(m) => m.predict_proba(features),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Covariates with the one-hot cluster indicators appended.
pub fn baseline_features(data: &Dataset, clusters: &ClusterAssignment) -> Result<DMatrix<f64>> {
    if clusters.labels.len() != data.n() {
        return Err(Error::Dimension(format!(
            "{} cluster labels for {} nodes",
            clusters.labels.len(),
            data.n()
        )));
    }
    let x = data.covariates();
    let onehot = clusters.one_hot();
    let d = x.ncols();
    Ok(DMatrix::from_fn(data.n(), d + clusters.n_clusters, |i, j| {
        if j < d {
            x[(i, j)]
        } else {
            onehot[(i, j - d)]
        }
    }))
}

#[derive(Debug, Clone)]
pub struct BaselineOutput {
    pub clusters: ClusterAssignment,
    pub classifier: Classifier,
    /// Predictions on the training rows, in split order.
    pub train: Vec<f64>,
    /// Predictions on the test rows, in split order.
    pub test: Vec<f64>,
}

fn rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |r, c| m[(idx[r], c)])
}

pub(crate) fn check_split(n: usize, train: &[usize], test: &[usize]) -> Result<()> {
    let mut seen = vec![false; n];
    for &i in train.iter().chain(test) {
        if i >= n {
            return Err(Error::Invalid(format!("split index {i} out of range")));
        }
        if seen[i] {
            return Err(Error::Invalid(format!("node {i} appears twice in the split")));
        }
        seen[i] = true;
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Invalid("train and test sets must be nonempty".into()));
    }
    Ok(())
}

/// Clusters the full network into `c` groups, trains on the `train` rows and
/// predicts both sides of the split.
pub fn baseline_pipeline(
    data: &Dataset,
    c: usize,
    train: &[usize],
    test: &[usize],
    config: &BaselineConfig,
    seed: u64,
) -> Result<BaselineOutput> {
    check_split(data.n(), train, test)?;
    let clusters = spectral_cluster(data.adjacency(), c, seed)?;
    let features = baseline_features(data, &clusters)?;
    let labels: Vec<bool> = train.iter().map(|&i| data.adoption()[i] == 1).collect();
    let x_train = rows(&features, train);
    let classifier = Classifier::train(&x_train, &labels, config, seed)?;
    let train_p = classifier.predict_proba(&x_train)?;
    let test_p = classifier.predict_proba(&rows(&features, test))?;
    Ok(BaselineOutput {
        clusters,
        classifier,
        train: train_p,
        test: test_p,
    })
}

/// Writes `id,label` rows.
pub fn write_cluster_labels(data: &Dataset, clusters: &ClusterAssignment, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["id", "label"])?;
    for (id, l) in data.node_ids().iter().zip(&clusters.labels) {
        w.write_record([id.as_str(), &l.to_string()])?;
    }
    flush(w, path)
}
