//! Bagged CART classification trees (Gini impurity).

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features tried per split; `None` means `floor(sqrt(K))`, at least 1.
    pub max_features: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_features: None,
            min_leaf: 1,
            max_depth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(p) => return p,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

struct Builder<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [bool],
    mtry: usize,
    min_leaf: usize,
    max_depth: usize,
    nodes: Vec<Node>,
}

fn gini(pos: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let p = pos / n;
    2.0 * p * (1.0 - p)
}

impl Builder<'_> {
    /// Best split of `rows` on `feature`: `(weighted impurity, threshold)`.
    fn best_split(&self, rows: &[usize], feature: usize) -> Option<(f64, f64)> {
        let mut sorted: Vec<(f64, bool)> = rows.iter().map(|&r| (self.x[(r, feature)], self.y[r])).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = sorted.len() as f64;
        let total_pos = sorted.iter().filter(|s| s.1).count() as f64;
        let mut left_pos = 0.0;
        let mut best: Option<(f64, f64)> = None;
        for i in 0..sorted.len() - 1 {
            if sorted[i].1 {
                left_pos += 1.0;
            }
            let n_left = (i + 1) as f64;
            if sorted[i].0 == sorted[i + 1].0
                || i + 1 < self.min_leaf
                || sorted.len() - i - 1 < self.min_leaf
            {
                continue;
            }
            let imp = n_left * gini(left_pos, n_left) + (n - n_left) * gini(total_pos - left_pos, n - n_left);
            if best.is_none_or(|b| imp < b.0) {
                let threshold = 0.5 * (sorted[i].0 + sorted[i + 1].0);
                best = Some((imp, threshold));
            }
        }
        best
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let pos = rows.iter().filter(|&&r| self.y[r]).count();
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(pos as f64 / rows.len() as f64));
        if pos == 0 || pos == rows.len() || depth >= self.max_depth || rows.len() < 2 * self.min_leaf {
            return id;
        }
        let mut features: Vec<usize> = (0..self.x.ncols()).collect();
        features.shuffle(rng);
        // Try `mtry` features; keep drawing past that only if none of them splits.
        let mut best: Option<(f64, usize, f64)> = None;
        for (tried, &f) in features.iter().enumerate() {
            if tried >= self.mtry && best.is_some() {
                break;
            }
            if let Some((imp, thr)) = self.best_split(&rows, f) {
                if best.is_none_or(|b| imp < b.0) {
                    best = Some((imp, f, thr));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[(i, feature)] <= threshold);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

/// A trained random forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub config: ForestConfig,
    pub n_features: usize,
    trees: Vec<Tree>,
}

pub(crate) fn check_binary_training(features: &DMatrix<f64>, labels: &[bool]) -> Result<()> {
    if features.nrows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} feature rows but {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    if labels.len() < 2 {
        return Err(Error::Invalid("need at least two training samples".into()));
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::Invalid("training labels contain a single class".into()));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite feature value".into()));
    }
    Ok(())
}

/// Trains a forest. Tree `t` bootstraps with its own stream `t` of `seed`, so
/// the result does not depend on thread scheduling.
pub fn train_random_forest(
    features: &DMatrix<f64>,
    labels: &[bool],
    config: &ForestConfig,
    seed: u64,
) -> Result<RandomForest> {
    check_binary_training(features, labels)?;
    if config.n_trees == 0 || config.min_leaf == 0 {
        return Err(Error::Invalid("forest needs n_trees >= 1 and min_leaf >= 1".into()));
    }
    let k = features.ncols();
    let mtry = config
        .max_features
        .unwrap_or(((k as f64).sqrt().floor() as usize).max(1))
        .clamp(1, k.max(1));
    let n = labels.len();
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut b = Builder {
                x: features,
                y: labels,
                mtry,
                min_leaf: config.min_leaf,
                max_depth: config.max_depth.unwrap_or(usize::MAX),
                nodes: Vec::new(),
            };
            b.build(rows, 0, &mut rng);
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(RandomForest {
        config: *config,
        n_features: k,
        trees,
    })
}

impl RandomForest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Mean over trees of the leaf positive-class frequency.
    pub fn predict_proba(&self, features: &DMatrix<f64>) -> Result<Vec<f64>> {
        if features.ncols() != self.n_features {
            return Err(Error::Dimension(format!(
                "forest expects {} features, got {}",
                self.n_features,
                features.ncols()
            )));
        }
        Ok((0..features.nrows())
            .map(|i| {
                let row: Vec<f64> = features.row(i).iter().copied().collect();
                self.trees.iter().map(|t| t.predict(&row)).sum::<f64>() / self.trees.len() as f64
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable() -> (DMatrix<f64>, Vec<bool>) {
        let x = DMatrix::from_fn(40, 2, |i, d| if d == 0 { i as f64 } else { ((i * 13) % 7) as f64 });
        let y = (0..40).map(|i| i >= 20).collect();
        (x, y)
    }

    #[test]
    fn single_class_is_rejected() {
        let x = DMatrix::zeros(4, 1);
        assert!(train_random_forest(&x, &[true; 4], &ForestConfig::default(), 0).is_err());
    }

    #[test]
    fn separable_data_is_fit_perfectly() {
        let (x, y) = separable();
        let cfg = ForestConfig {
            n_trees: 30,
            ..Default::default()
        };
        let f = train_random_forest(&x, &y, &cfg, 1).unwrap();
        let p = f.predict_proba(&x).unwrap();
        let min_pos = (0..40).filter(|&i| y[i]).map(|i| p[i]).fold(f64::INFINITY, f64::min);
        let max_neg = (0..40).filter(|&i| !y[i]).map(|i| p[i]).fold(0.0, f64::max);
        assert!(min_pos > max_neg);
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn deterministic_given_seed_and_serializable() {
        let (x, y) = separable();
        let cfg = ForestConfig {
            n_trees: 10,
            ..Default::default()
        };
        let a = train_random_forest(&x, &y, &cfg, 5).unwrap();
        let b = train_random_forest(&x, &y, &cfg, 5).unwrap();
        assert_eq!(a, b);
        let text = serde_json::to_string(&a).unwrap();
        let back: RandomForest = serde_json::from_str(&text).unwrap();
        assert_eq!(back.predict_proba(&x).unwrap(), a.predict_proba(&x).unwrap());
    }

    #[test]
    fn depth_limit_and_constant_features() {
        let (x, y) = separable();
        let cfg = ForestConfig {
            n_trees: 5,
            max_depth: Some(1),
            ..Default::default()
        };
        let f = train_random_forest(&x, &y, &cfg, 2).unwrap();
        assert!(f.trees().iter().all(|t| t.depth() <= 1));

        // No usable feature: every tree is a single leaf at its bootstrap base rate.
        let x0 = DMatrix::zeros(6, 2);
        let y0 = vec![true, false, true, false, false, false];
        let f = train_random_forest(&x0, &y0, &cfg, 2).unwrap();
        assert!(f.trees().iter().all(|t| t.depth() == 0));
    }
}
