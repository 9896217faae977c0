//! Post-fit summaries: block sizes, reordered adjacency, influence flows,
//! per-block attribute profiles and a DOT export of the block graph.
//!
//! Block-indexed outputs are listed in ascending block size (ties by index).

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::hash::Hash;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{csv_writer, flush, Dataset};
use crate::error::{Error, Result};
use crate::latent::{hard_assignments, BlockStats, LatentState};

pub const ANALYSIS_SCHEMA_VERSION: u32 = 1;

/// Hard-assignment counts and proportions.
pub fn block_sizes(membership: &DMatrix<f64>) -> BlockStats {
    BlockStats::from_labels(&hard_assignments(membership), membership.ncols())
}

/// Block indices by ascending size, ties by index.
pub fn size_order(stats: &BlockStats) -> Vec<usize> {
    let mut order: Vec<usize> = (0..stats.sizes.len()).collect();
    order.sort_by_key(|&k| (stats.sizes[k], k));
    order
}

/// Node permutation grouping nodes by block (ascending block size, then block
/// index, then node index) and the permuted adjacency `P A Pᵀ`.
pub fn sorted_adjacency(data: &Dataset, membership: &DMatrix<f64>) -> Result<(DMatrix<u8>, Vec<usize>)> {
    if membership.nrows() != data.n() {
        return Err(Error::Dimension(format!(
            "membership has {} rows for {} nodes",
            membership.nrows(),
            data.n()
        )));
    }
    let labels = hard_assignments(membership);
    let stats = BlockStats::from_labels(&labels, membership.ncols());
    let mut rank = vec![0; membership.ncols()];
    for (pos, k) in size_order(&stats).into_iter().enumerate() {
        rank[k] = pos;
    }
    let mut perm: Vec<usize> = (0..data.n()).collect();
    perm.sort_by_key(|&i| (rank[labels[i]], i));
    let a = data.adjacency();
    let sorted = DMatrix::from_fn(data.n(), data.n(), |r, c| u8::from(a.get(perm[r], perm[c])));
    Ok((sorted, perm))
}

/// Edge density among pairs in the same block and among pairs in different blocks.
pub fn block_densities(data: &Dataset, labels: &[usize]) -> (f64, f64) {
    let (mut win, mut wpairs, mut bet, mut bpairs) = (0usize, 0usize, 0usize, 0usize);
    let a = data.adjacency();
    for i in 0..data.n() {
        for j in i + 1..data.n() {
            let e = usize::from(a.get(i, j));
            if labels[i] == labels[j] {
                win += e;
                wpairs += 1;
            } else {
                bet += e;
                bpairs += 1;
            }
        }
    }
    let ratio = |e: usize, p: usize| if p == 0 { f64::NAN } else { e as f64 / p as f64 };
    (ratio(win, wpairs), ratio(bet, bpairs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowSign {
    Positive,
    Negative,
    Neutral,
}

impl FlowSign {
    /// Neutral when `|value| <= tolerance`.
    pub fn of(value: f64, tolerance: f64) -> Self {
        if value > tolerance {
            FlowSign::Positive
        } else if value < -tolerance {
            FlowSign::Negative
        } else {
            FlowSign::Neutral
        }
    }
}

/// Influence matrix reordered by `order`, with off-diagonal row and column sums.
///
/// `matrix[(a, b)] = F[order[a], order[b]]` is the influence of block
/// `order[a]` on block `order[b]`; the flow vectors follow the same order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceFlows {
    pub order: Vec<usize>,
    pub matrix: Vec<Vec<f64>>,
    /// `Σ_{l≠k} F[l, k]`.
    pub inflow: Vec<f64>,
    /// `Σ_{l≠k} F[k, l]`.
    pub outflow: Vec<f64>,
    pub self_influence: Vec<f64>,
}

impl InfluenceFlows {
    pub fn n_blocks(&self) -> usize {
        self.order.len()
    }

    pub fn total_cross(&self) -> f64 {
        self.inflow.iter().sum()
    }
}

pub(crate) fn check_permutation(order: &[usize], c: usize) -> Result<()> {
    let mut seen = vec![false; c];
    if order.len() != c {
        return Err(Error::Invalid(format!("block order has {} entries, expected {c}", order.len())));
    }
    for &k in order {
        if k >= c || seen[k] {
            return Err(Error::Invalid("block order is not a permutation".into()));
        }
        seen[k] = true;
    }
    Ok(())
}

pub fn influence_flows(state: &LatentState, order: &[usize]) -> Result<InfluenceFlows> {
    let f = &state.influence;
    let c = f.nrows();
    check_permutation(order, c)?;
    let p = DMatrix::from_fn(c, c, |a, b| f[(order[a], order[b])]);
    let diag = p.diagonal();
    let inflow = (0..c).map(|k| p.column(k).sum() - diag[k]).collect();
    let outflow = (0..c).map(|k| p.row(k).sum() - diag[k]).collect();
    Ok(InfluenceFlows {
        order: order.to_vec(),
        matrix: p.row_iter().map(|r| r.iter().copied().collect()).collect(),
        inflow,
        outflow,
        self_influence: diag.iter().copied().collect(),
    })
}

/// Shannon entropy over the observed types divided by `ln q` (`q` distinct
/// types); zero when only one type occurs.
pub fn normalized_entropy<T: Eq + Hash>(categories: &[T]) -> Result<f64> {
    if categories.is_empty() {
        return Err(Error::Invalid("entropy of an empty vector".into()));
    }
    let mut counts: HashMap<&T, usize> = HashMap::new();
    for c in categories {
        *counts.entry(c).or_default() += 1;
    }
    let q = counts.len();
    if q == 1 {
        return Ok(0.0);
    }
    let n = categories.len() as f64;
    let mut freqs: Vec<usize> = counts.into_values().collect();
    freqs.sort_unstable();
    let h: f64 = freqs
        .iter()
        .map(|&k| {
            let p = k as f64 / n;
            -p * p.ln()
        })
        .sum();
    // Exactly 1 for a uniform distribution.
    if freqs.first() == freqs.last() {
        return Ok(1.0);
    }
    Ok((h / (q as f64).ln()).min(1.0))
}

/// Males per female; `true` marks a male.
pub fn gender_ratio(is_male: &[bool]) -> Result<f64> {
    let males = is_male.iter().filter(|&&m| m).count();
    let females = is_male.len() - males;
    if females == 0 {
        return Err(Error::Invalid("gender ratio is undefined without females".into()));
    }
    Ok(males as f64 / females as f64)
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    })
}

/// Which covariate columns to summarize per block.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributeSchema {
    pub numeric: Vec<String>,
    pub categorical: Vec<String>,
    /// Column coding males as 1 and females as 0.
    pub gender: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockProfile {
    pub block: usize,
    pub size: usize,
    /// Median per numeric attribute; `None` for an empty block.
    pub medians: BTreeMap<String, Option<f64>>,
    pub entropy: BTreeMap<String, Option<f64>>,
    /// `None` when undefined (no females or empty block) or not requested.
    pub gender_ratio: Option<f64>,
}

/// Per-block attribute summaries under hard assignment, in ascending block size.
pub fn block_profile(data: &Dataset, membership: &DMatrix<f64>, schema: &AttributeSchema) -> Result<Vec<BlockProfile>> {
    let col = |name: &str| {
        data.covariate_names()
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Invalid(format!("unknown attribute column '{name}'")))
    };
    let numeric: Vec<(String, usize)> =
        schema.numeric.iter().map(|n| Ok((n.clone(), col(n)?))).collect::<Result<_>>()?;
    let categorical: Vec<(String, usize)> =
        schema.categorical.iter().map(|n| Ok((n.clone(), col(n)?))).collect::<Result<_>>()?;
    let gender = schema.gender.as_deref().map(col).transpose()?;
    if membership.nrows() != data.n() {
        return Err(Error::Dimension("membership rows do not match nodes".into()));
    }
    let labels = hard_assignments(membership);
    let stats = BlockStats::from_labels(&labels, membership.ncols());
    let x = data.covariates();
    size_order(&stats)
        .into_iter()
        .map(|k| {
            let members: Vec<usize> = (0..data.n()).filter(|&i| labels[i] == k).collect();
            let medians = numeric
                .iter()
                .map(|(name, d)| {
                    let mut v: Vec<f64> = members.iter().map(|&i| x[(i, *d)]).collect();
                    (name.clone(), median(&mut v))
                })
                .collect();
            let entropy = categorical
                .iter()
                .map(|(name, d)| {
                    let v: Vec<u64> = members.iter().map(|&i| x[(i, *d)].to_bits()).collect();
                    (name.clone(), normalized_entropy(&v).ok())
                })
                .collect();
            let gender_ratio = gender.and_then(|d| {
                let v: Vec<bool> = members.iter().map(|&i| x[(i, d)] == 1.0).collect();
                gender_ratio(&v).ok()
            });
            Ok(BlockProfile {
                block: k,
                size: members.len(),
                medians,
                entropy,
                gender_ratio,
            })
        })
        .collect()
}

/// Edge colours from strong negative to strong positive, split at ±0.25 and ±1.
pub const EDGE_COLORS: [&str; 5] = ["#2166ac", "#92c5de", "#bdbdbd", "#f4a582", "#b2182b"];

pub fn edge_bucket(weight: f64) -> usize {
    match weight {
        w if w <= -1.0 => 0,
        w if w <= -0.25 => 1,
        w if w < 0.25 => 2,
        w if w < 1.0 => 3,
        _ => 4,
    }
}

/// DOT digraph of the blocks. Nodes follow `flows.order`; an edge `k -> l`
/// (self-loops included) is written when `|F[k, l]| > min_weight`. Each node
/// label carries its size and, if given, one profile statistic.
pub fn block_graph_dot(
    flows: &InfluenceFlows,
    sizes: &BlockStats,
    annotation: Option<(&str, &[BlockProfile])>,
    min_weight: f64,
) -> String {
    let mut s = String::from("digraph blocks {\n  node [shape=circle];\n");
    for &k in &flows.order {
        let mut label = format!("block {k}\\nn = {}", sizes.sizes[k]);
        if let Some((stat, profiles)) = annotation {
            if let Some(p) = profiles.iter().find(|p| p.block == k) {
                let value = p
                    .medians
                    .get(stat)
                    .or_else(|| p.entropy.get(stat))
                    .copied()
                    .flatten()
                    .or(if stat == "gender_ratio" { p.gender_ratio } else { None });
                match value {
                    Some(v) => {
                        let _ = write!(label, "\\n{stat} = {v:.3}");
                    }
                    None => {
                        let _ = write!(label, "\\n{stat} = NA");
                    }
                }
            }
        }
        let _ = writeln!(s, "  b{k} [label=\"{label}\"];");
    }
    for (a, &k) in flows.order.iter().enumerate() {
        for (b, &l) in flows.order.iter().enumerate() {
            let w = flows.matrix[a][b];
            if w.abs() > min_weight {
                let _ = writeln!(
                    s,
                    "  b{k} -> b{l} [weight={w:.6}, label=\"{w:.3}\", color=\"{}\"];",
                    EDGE_COLORS[edge_bucket(w)]
                );
            }
        }
    }
    s.push_str("}\n");
    s
}

pub fn export_block_graph(
    flows: &InfluenceFlows,
    sizes: &BlockStats,
    annotation: Option<(&str, &[BlockProfile])>,
    min_weight: f64,
    path: &Path,
) -> Result<()> {
    fs::write(path, block_graph_dot(flows, sizes, annotation, min_weight)).map_err(|e| Error::io(path, e))
}

/// Combined report written as `analysis.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub n_blocks: usize,
    pub n_nodes: usize,
    pub block_sizes: Vec<usize>,
    pub block_proportions: Vec<f64>,
    pub size_order: Vec<usize>,
    pub within_block_density: f64,
    pub between_block_density: f64,
    pub flows: InfluenceFlows,
    pub profiles: Vec<BlockProfile>,
}

pub fn analyze(data: &Dataset, state: &LatentState, schema: &AttributeSchema) -> Result<AnalysisReport> {
    state.validate()?;
    let stats = block_sizes(&state.membership);
    let order = size_order(&stats);
    let labels = hard_assignments(&state.membership);
    let (within, between) = block_densities(data, &labels);
    Ok(AnalysisReport {
        schema_version: ANALYSIS_SCHEMA_VERSION,
        n_blocks: state.n_blocks(),
        n_nodes: state.n_nodes(),
        block_sizes: stats.sizes.clone(),
        block_proportions: stats.proportions.clone(),
        size_order: order.clone(),
        within_block_density: within,
        between_block_density: between,
        flows: influence_flows(state, &order)?,
        profiles: block_profile(data, &state.membership, schema)?,
    })
}

impl AnalysisReport {
    pub fn block_stats(&self) -> BlockStats {
        BlockStats {
            sizes: self.block_sizes.clone(),
            proportions: self.block_proportions.clone(),
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Sorted influence matrix with `block_k` headers in size order.
    pub fn write_influence_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        let mut header = vec!["from".to_string()];
        header.extend(self.flows.order.iter().map(|k| format!("block_{k}")));
        w.write_record(&header)?;
        for (a, row) in self.flows.matrix.iter().enumerate() {
            let mut rec = vec![format!("block_{}", self.flows.order[a])];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        flush(w, path)
    }
}

/// Reordered adjacency as a 0/1 CSV, header row of node ids in the new order.
pub fn write_sorted_adjacency_csv(data: &Dataset, sorted: &DMatrix<u8>, perm: &[usize], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(perm.iter().map(|&i| data.node_ids()[i].as_str()))?;
    for r in 0..sorted.nrows() {
        w.write_record(sorted.row(r).iter().map(|v| v.to_string()))?;
    }
    flush(w, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Adjacency;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn one_hot(labels: &[usize], c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(labels.len(), c, |i, k| if labels[i] == k { 1.0 } else { 0.0 })
    }

    fn state_with_f(f: DMatrix<f64>) -> LatentState {
        let c = f.nrows();
        LatentState {
            membership: DMatrix::from_element(4, c, 1.0 / c as f64),
            connectivity: DMatrix::from_element(c, c, 0.2),
            influence: f,
            coefficients: DVector::zeros(0),
        }
    }

    #[test]
    fn sizes_and_tie_break() {
        let s = block_sizes(&one_hot(&[0, 2, 2, 1, 2], 3));
        assert_eq!(s.sizes, vec![1, 1, 3]);
        assert_eq!(size_order(&s), vec![0, 1, 2]);
        let s = block_sizes(&DMatrix::from_element(6, 2, 0.5));
        assert_eq!(s.sizes, vec![6, 0]);
        assert_eq!(s.sizes.iter().sum::<usize>(), 6);
    }

    #[test]
    fn flows_single_entry() {
        let mut f = DMatrix::zeros(3, 3);
        f[(0, 1)] = 2.0;
        let fl = influence_flows(&state_with_f(f), &[0, 1, 2]).unwrap();
        assert_eq!(fl.outflow, vec![2.0, 0.0, 0.0]);
        assert_eq!(fl.inflow, vec![0.0, 2.0, 0.0]);
        let zero = influence_flows(&state_with_f(DMatrix::zeros(2, 2)), &[1, 0]).unwrap();
        assert!(zero.inflow.iter().chain(&zero.outflow).all(|&v| v == 0.0));
        assert!(influence_flows(&state_with_f(DMatrix::zeros(2, 2)), &[1, 1]).is_err());
    }

    proptest! {
        #[test]
        fn flows_match_loops_and_balance(
            vals in prop::collection::vec(-3.0f64..3.0, 16),
            perm in Just((0..4usize).collect::<Vec<_>>()).prop_shuffle()
        ) {
            let f = DMatrix::from_row_slice(4, 4, &vals);
            let fl = influence_flows(&state_with_f(f.clone()), &perm).unwrap();
            for (a, &k) in perm.iter().enumerate() {
                let mut inflow = 0.0;
                let mut outflow = 0.0;
                for l in 0..4 {
                    if l != k {
                        inflow += f[(l, k)];
                        outflow += f[(k, l)];
                    }
                }
                prop_assert!((fl.inflow[a] - inflow).abs() < 1e-9);
                prop_assert!((fl.outflow[a] - outflow).abs() < 1e-9);
                prop_assert_eq!(fl.self_influence[a], f[(k, k)]);
            }
            let cross: f64 = (0..4).flat_map(|k| (0..4).map(move |l| (k, l))).filter(|(k, l)| k != l).map(|p| f[p]).sum();
            prop_assert!((fl.inflow.iter().sum::<f64>() - cross).abs() < 1e-9);
            prop_assert!((fl.outflow.iter().sum::<f64>() - cross).abs() < 1e-9);
        }

        #[test]
        fn entropy_bounds_and_renaming(labels in prop::collection::vec(0u8..5, 1..50)) {
            let q = normalized_entropy(&labels).unwrap();
            prop_assert!((0.0..=1.0).contains(&q));
            let renamed: Vec<u8> = labels.iter().map(|l| 9 - l).collect();
            prop_assert!((normalized_entropy(&renamed).unwrap() - q).abs() < 1e-12);
        }

        #[test]
        fn sorted_adjacency_preserves_spectrum(
            edges in prop::collection::vec((0usize..7, 0usize..7), 0..15),
            labels in prop::collection::vec(0usize..3, 7)
        ) {
            let edges: Vec<(usize, usize)> = edges.into_iter().filter(|(i, j)| i != j).collect();
            let adj = Adjacency::from_edges(7, &edges).unwrap();
            let data = Dataset::from_parts(adj, DMatrix::zeros(7, 0), vec![0; 7]).unwrap();
            let (sorted, perm) = sorted_adjacency(&data, &one_hot(&labels, 3)).unwrap();
            let mut d0: Vec<usize> = (0..7).map(|i| data.adjacency().degree(i)).collect();
            let mut d1: Vec<usize> = (0..7).map(|r| sorted.row(r).iter().map(|&v| usize::from(v)).sum()).collect();
            d0.sort_unstable();
            d1.sort_unstable();
            prop_assert_eq!(d0, d1);
            let mut e0: Vec<f64> = data.adjacency().to_f64().symmetric_eigenvalues().iter().copied().collect();
            let mut e1: Vec<f64> = sorted.map(f64::from).symmetric_eigenvalues().iter().copied().collect();
            e0.sort_by(f64::total_cmp);
            e1.sort_by(f64::total_cmp);
            for (a, b) in e0.iter().zip(&e1) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            let mut p = perm.clone();
            p.sort_unstable();
            prop_assert_eq!(p, (0..7).collect::<Vec<_>>());
        }
    }

    #[test]
    fn single_block_sort_is_identity() {
        let adj = Adjacency::from_edges(4, &[(0, 3), (1, 2)]).unwrap();
        let data = Dataset::from_parts(adj, DMatrix::zeros(4, 0), vec![0; 4]).unwrap();
        let (sorted, perm) = sorted_adjacency(&data, &DMatrix::from_element(4, 1, 1.0)).unwrap();
        assert_eq!(perm, vec![0, 1, 2, 3]);
        assert_eq!(sorted, data.adjacency().to_dense());
    }

    #[test]
    fn entropy_cases() {
        assert_eq!(normalized_entropy(&["x"; 4]).unwrap(), 0.0);
        assert_eq!(normalized_entropy(&[1, 2, 3, 4, 1, 2, 3, 4]).unwrap(), 1.0);
        let h = -(2.0f64 / 3.0 * (2.0f64 / 3.0).ln() + 1.0 / 3.0 * (1.0f64 / 3.0).ln());
        let q = normalized_entropy(&['a', 'a', 'b']).unwrap();
        assert!((q - h / 2f64.ln()).abs() < 1e-12);
        assert!((q - 0.9183).abs() < 1e-4);
        assert!(normalized_entropy::<u8>(&[]).is_err());
    }

    #[test]
    fn gender_ratio_cases() {
        let mut v = vec![true; 10];
        v.extend([false; 5]);
        assert_eq!(gender_ratio(&v).unwrap(), 2.0);
        assert_eq!(gender_ratio(&[true, false, false, true]).unwrap(), 1.0);
        assert!(gender_ratio(&[true, true]).is_err());
    }

    fn profile_data() -> Dataset {
        let x = DMatrix::from_row_slice(5, 3, &[
            30.0, 1.0, 1.0, //
            50.0, 2.0, 0.0, //
            40.0, 1.0, 1.0, //
            20.0, 3.0, 0.0, //
            60.0, 3.0, 1.0,
        ]);
        let adj = Adjacency::from_edges(5, &[]).unwrap();
        Dataset::from_parts(adj, x.clone(), vec![0; 5])
            .unwrap()
            .with_covariates(vec!["age".into(), "caste".into(), "male".into()], x)
            .unwrap()
    }

    #[test]
    fn profile_against_direct_computation() {
        let data = profile_data();
        let m = one_hot(&[0, 0, 0, 1, 1], 3);
        let schema = AttributeSchema {
            numeric: vec!["age".into()],
            categorical: vec!["caste".into()],
            gender: Some("male".into()),
        };
        let p = block_profile(&data, &m, &schema).unwrap();
        // Size order: block 2 (empty), block 1 (2 nodes), block 0 (3 nodes).
        assert_eq!(p.iter().map(|b| b.block).collect::<Vec<_>>(), vec![2, 1, 0]);
        assert_eq!(p[0].medians["age"], None);
        assert_eq!(p[1].medians["age"], Some(40.0));
        assert_eq!(p[2].medians["age"], Some(40.0));
        assert_eq!(p[1].entropy["caste"], Some(0.0));
        let caste0 = [1.0f64.to_bits(), 2.0f64.to_bits(), 1.0f64.to_bits()];
        assert_eq!(p[2].entropy["caste"], Some(normalized_entropy(&caste0).unwrap()));
        assert_eq!(p[2].gender_ratio, Some(2.0));
        assert_eq!(p[1].gender_ratio, Some(1.0));
        let bad = AttributeSchema {
            numeric: vec!["income".into()],
            ..Default::default()
        };
        assert!(block_profile(&data, &m, &bad).is_err());
    }

    #[test]
    fn single_member_block_medians() {
        let data = profile_data();
        let m = one_hot(&[0, 1, 1, 1, 1], 2);
        let schema = AttributeSchema {
            numeric: vec!["age".into(), "caste".into()],
            ..Default::default()
        };
        let p = block_profile(&data, &m, &schema).unwrap();
        assert_eq!(p[0].block, 0);
        assert_eq!(p[0].medians["age"], Some(30.0));
        assert_eq!(p[0].medians["caste"], Some(1.0));
    }

    #[test]
    fn medians_match_sort_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for len in 1..30 {
            let mut v: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
            let mut sorted = v.clone();
            sorted.sort_by(f64::total_cmp);
            let want = if len % 2 == 1 {
                sorted[len / 2]
            } else {
                (sorted[len / 2 - 1] + sorted[len / 2]) / 2.0
            };
            assert_eq!(median(&mut v), Some(want));
        }
    }

    #[test]
    fn dot_export() {
        let mut f = DMatrix::zeros(3, 3);
        f[(0, 1)] = 2.0;
        f[(2, 2)] = -0.5;
        f[(1, 0)] = 0.05;
        let fl = influence_flows(&state_with_f(f.clone()), &[0, 1, 2]).unwrap();
        let sizes = BlockStats::from_labels(&[0, 1, 1, 2], 3);
        let dot = block_graph_dot(&fl, &sizes, None, 0.1);
        assert_eq!(dot.matches("->").count(), f.iter().filter(|v| v.abs() > 0.1).count());
        assert!(dot.contains(EDGE_COLORS[4]) && dot.contains(EDGE_COLORS[1]));
        assert_eq!(dot, block_graph_dot(&fl, &sizes, None, 0.1));
        let zero = influence_flows(&state_with_f(DMatrix::zeros(3, 3)), &[0, 1, 2]).unwrap();
        let dot = block_graph_dot(&zero, &sizes, None, 0.0);
        assert_eq!(dot.matches("->").count(), 0);
        assert_eq!(dot.matches("[label=").count(), 3);
    }

    #[test]
    fn bucket_edges() {
        assert_eq!(
            [-3.0, -0.5, 0.0, 0.5, 3.0].map(edge_bucket),
            [0, 1, 2, 3, 4]
        );
    }
}
