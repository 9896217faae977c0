//! Normalized-Laplacian spectral clustering with k-means++ on the embedding.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Adjacency;
use crate::error::{Error, Result};

const KMEANS_RESTARTS: usize = 20;
const KMEANS_MAX_ITER: usize = 300;

/// Hard cluster labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub n_clusters: usize,
}

impl ClusterAssignment {
    pub fn new(labels: Vec<usize>, n_clusters: usize) -> Result<Self> {
        if labels.is_empty() || n_clusters == 0 {
            return Err(Error::Invalid("empty cluster assignment".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_clusters) {
            return Err(Error::Invalid(format!("label {bad} out of range for {n_clusters} clusters")));
        }
        Ok(Self { labels, n_clusters })
    }

    /// N x C indicator matrix.
    pub fn one_hot(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.labels.len(), self.n_clusters, |i, k| {
            if self.labels[i] == k {
                1.0
            } else {
                0.0
            }
        })
    }
}

/// `I - D^{-1/2} A D^{-1/2}` with degrees floored at 1.
pub fn normalized_laplacian(adjacency: &Adjacency) -> DMatrix<f64> {
    let n = adjacency.n();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / (adjacency.degree(i).max(1) as f64).sqrt())
        .collect();
    let mut l = DMatrix::identity(n, n);
    for i in 0..n {
        for &j in adjacency.neighbors(i) {
            l[(i, j)] -= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    l
}

/// Eigenvectors of the `c` smallest Laplacian eigenvalues, rows scaled to unit
/// norm (all-zero rows stay zero).
///
/// Each eigenvector's sign is fixed so its first nonzero coordinate is positive.
pub fn spectral_embedding(adjacency: &Adjacency, c: usize) -> Result<DMatrix<f64>> {
    let n = adjacency.n();
    if c == 0 || c > n {
        return Err(Error::Invalid(format!("cannot embed {n} nodes into {c} dimensions")));
    }
    let eig = SymmetricEigen::new(normalized_laplacian(adjacency));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let mut emb = DMatrix::zeros(n, c);
    for (col, &idx) in order.iter().take(c).enumerate() {
        let v = eig.eigenvectors.column(idx);
        let sign = match v.iter().find(|x| x.abs() > 1e-12) {
            Some(&x) if x < 0.0 => -1.0,
            _ => 1.0,
        };
        for i in 0..n {
            emb[(i, col)] = sign * v[i];
        }
    }
    for mut row in emb.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    Ok(emb)
}

/// Spectral clustering into `c` groups.
pub fn spectral_cluster(adjacency: &Adjacency, c: usize, seed: u64) -> Result<ClusterAssignment> {
    if c < 2 {
        return Err(Error::Invalid("spectral clustering needs at least two clusters".into()));
    }
    if c > adjacency.n() {
        return Err(Error::Invalid(format!(
            "{c} clusters requested for {} nodes",
            adjacency.n()
        )));
    }
    let emb = spectral_embedding(adjacency, c)?;
    let (labels, _) = kmeans(&emb, c, KMEANS_RESTARTS, seed)?;
    ClusterAssignment::new(labels, c)
}

fn sq_dist(points: &DMatrix<f64>, i: usize, center: &[f64]) -> f64 {
    center
        .iter()
        .enumerate()
        .map(|(d, &c)| (points[(i, d)] - c).powi(2))
        .sum()
}

/// Sum of squared distances to the assigned cluster means.
pub fn kmeans_objective(points: &DMatrix<f64>, labels: &[usize], k: usize) -> f64 {
    let centers = centroids(points, labels, k);
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(points, i, &centers[l]))
        .sum()
}

fn centroids(points: &DMatrix<f64>, labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points.ncols();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for d in 0..dim {
            sums[l][d] += points[(i, d)];
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    sums
}

fn kmeans_pp_init(points: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.nrows();
    let row = |i: usize| points.row(i).iter().copied().collect::<Vec<_>>();
    let mut centers = vec![row(rng.random_range(0..n))];
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(points, i, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if u < d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(row(pick));
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(points, i, centers.last().expect("just pushed")));
        }
    }
    centers
}

fn lloyd(points: &DMatrix<f64>, mut centers: Vec<Vec<f64>>) -> (Vec<usize>, f64) {
    let (n, k) = (points.nrows(), centers.len());
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(points, i, center);
                if d < best.0 {
                    best = (d, c);
                }
            }
            if *label != best.1 {
                *label = best.1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        centers = centroids(points, &labels, k);
        // An emptied cluster takes over the point farthest from its center.
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(points, a, &centers[labels[a]])
                            .total_cmp(&sq_dist(points, b, &centers[labels[b]]))
                    })
                    .expect("nonempty");
                counts[labels[far]] -= 1;
                labels[far] = c;
                counts[c] = 1;
                centers = centroids(points, &labels, k);
            }
        }
    }
    let obj = kmeans_objective(points, &labels, k);
    (labels, obj)
}

/// Best of `restarts` k-means++ runs. Labels are renumbered in order of first
/// appearance.
pub fn kmeans(points: &DMatrix<f64>, k: usize, restarts: usize, seed: u64) -> Result<(Vec<usize>, f64)> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::Invalid(format!("k-means with k = {k} on {n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let init = kmeans_pp_init(points, k, &mut rng);
        let run = lloyd(points, init);
        if best.as_ref().is_none_or(|b| run.1 < b.1 - 1e-12) {
            best = Some(run);
        }
    }
    let (labels, obj) = best.expect("at least one restart");
    let mut remap = vec![usize::MAX; k];
    let mut next = 0;
    let labels = labels
        .into_iter()
        .map(|l| {
            if remap[l] == usize::MAX {
                remap[l] = next;
                next += 1;
            }
            remap[l]
        })
        .collect();
    Ok((labels, obj))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cliques(sizes: &[usize]) -> Adjacency {
        let mut edges = Vec::new();
        let mut start = 0;
        for &s in sizes {
            for i in start..start + s {
                for j in i + 1..start + s {
                    edges.push((i, j));
                }
            }
            start += s;
        }
        Adjacency::from_edges(start, &edges).unwrap()
    }

    #[test]
    fn two_cliques_split_exactly() {
        let a = cliques(&[5, 5]);
        let out = spectral_cluster(&a, 2, 0).unwrap();
        assert_eq!(out.labels, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn embedding_rows_are_unit_or_zero() {
        let a = Adjacency::from_edges(7, &[(0, 1), (1, 2), (2, 3), (4, 5)]).unwrap();
        let emb = spectral_embedding(&a, 3).unwrap();
        for row in emb.row_iter() {
            let n = row.norm();
            assert!(n == 0.0 || (n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn laplacian_of_isolated_node_is_identity_row() {
        let a = Adjacency::from_edges(3, &[(0, 1)]).unwrap();
        let l = normalized_laplacian(&a);
        assert_eq!(l[(2, 2)], 1.0);
        assert_eq!(l.row(2).sum(), 1.0);
        assert!((l[(0, 1)] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let a = cliques(&[3]);
        assert!(spectral_cluster(&a, 1, 0).is_err());
        assert!(spectral_cluster(&a, 4, 0).is_err());
        assert!(ClusterAssignment::new(vec![0, 2], 2).is_err());
    }

    #[test]
    fn complete_graph_matches_exhaustive_kmeans() {
        let n = 8;
        let edges: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let a = Adjacency::from_edges(n, &edges).unwrap();
        let emb = spectral_embedding(&a, 2).unwrap();
        let out = spectral_cluster(&a, 2, 3).unwrap();
        let found = kmeans_objective(&emb, &out.labels, 2);
        // Brute force over all 2-colourings with both colours used.
        let best = (1u32..(1 << n) - 1)
            .map(|mask| {
                let labels: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
                kmeans_objective(&emb, &labels, 2)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(found <= best + 1e-9, "{found} vs {best}");
    }

    #[test]
    fn kmeans_is_deterministic() {
        let pts = DMatrix::from_fn(30, 2, |i, d| ((i * 7 + d * 3) % 11) as f64);
        assert_eq!(kmeans(&pts, 3, 5, 9).unwrap(), kmeans(&pts, 3, 5, 9).unwrap());
    }
}
