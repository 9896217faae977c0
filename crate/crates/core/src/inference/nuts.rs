//! No-U-Turn Sampler with multinomial trajectory sampling.
//!
//! Trajectories grow by repeated doubling in a random direction. A subtree is
//! rejected when its endpoints satisfy the generalized U-turn condition
//! (checked on the merged tree and across the join), or when the energy
//! error of any leaf exceeds [`SamplerConfig::max_energy_error`]. Within a
//! subtree, proposals are drawn multinomially with weights `exp(-H)`; at the
//! top level the draw is biased toward the newest subtree.

use log::info;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adapt::{DualAveraging, WarmupSchedule, Welford};
use crate::error::{Error, Result};

/// Target density in unconstrained coordinates.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log-density.
    fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_burnin: usize,
    pub n_samples: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub n_chains: usize,
    pub seed: u64,
    /// Estimate a diagonal metric during burn-in.
    pub adapt_mass_matrix: bool,
    /// Divergence threshold on `H - H0`.
    pub max_energy_error: f64,
    /// Standard deviation of the Normal(0, sd) initial draw.
    pub init_sd: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_burnin: 3000,
            n_samples: 500,
            target_accept: 0.8,
            max_tree_depth: 10,
            n_chains: 4,
            seed: 0,
            adapt_mass_matrix: true,
            max_energy_error: 1000.0,
            init_sd: 0.1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.n_chains == 0 || self.max_tree_depth == 0 {
            return Err(Error::Invalid(
                "n_samples, n_chains and max_tree_depth must be positive".into(),
            ));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Invalid(format!(
                "target_accept must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        if !(self.max_energy_error > 0.0) || !(self.init_sd >= 0.0) {
            return Err(Error::Invalid("max_energy_error and init_sd must be positive".into()));
        }
        Ok(())
    }
}

/// Per-iteration sampler statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawStats {
    pub accept_stat: f64,
    pub diverging: bool,
    pub tree_depth: usize,
    pub n_leapfrog: usize,
    pub energy: f64,
    pub step_size: f64,
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    /// Post-burn-in positions.
    pub draws: Vec<Vec<f64>>,
    pub stats: Vec<DrawStats>,
    pub step_size: f64,
    pub inv_mass: Vec<f64>,
    pub warmup_divergences: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Point {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl Point {
    fn new<T: LogDensity>(target: &T, q: Vec<f64>) -> Result<Self> {
        let mut grad = vec![0.0; q.len()];
        let logp = target.logp_and_grad(&q, &mut grad)?;
        if !logp.is_finite() {
            return Err(Error::NonFinite {
                what: "initial log density",
                index: 0,
            });
        }
        Ok(Self {
            p: vec![0.0; q.len()],
            q,
            grad,
            logp,
        })
    }

    fn kinetic(&self, inv_mass: &[f64]) -> f64 {
        0.5 * self
            .p
            .iter()
            .zip(inv_mass)
            .map(|(p, m)| p * p * m)
            .sum::<f64>()
    }

    pub(crate) fn energy(&self, inv_mass: &[f64]) -> f64 {
        -self.logp + self.kinetic(inv_mass)
    }

    fn p_sharp(&self, inv_mass: &[f64]) -> Vec<f64> {
        self.p.iter().zip(inv_mass).map(|(p, m)| p * m).collect()
    }
}

/// One leapfrog step of size `eps` (negative to integrate backward in time).
/// On density failure the point's log-density is set to `-inf`.
pub(crate) fn leapfrog<T: LogDensity>(target: &T, point: &mut Point, eps: f64, inv_mass: &[f64]) {
    let half = 0.5 * eps;
    for (p, g) in point.p.iter_mut().zip(&point.grad) {
        *p += half * g;
    }
    for ((q, p), m) in point.q.iter_mut().zip(&point.p).zip(inv_mass) {
        *q += eps * m * p;
    }
    match target.logp_and_grad(&point.q, &mut point.grad) {
        Ok(lp) if lp.is_finite() => {
            point.logp = lp;
            for (p, g) in point.p.iter_mut().zip(&point.grad) {
                *p += half * g;
            }
        }
        _ => point.logp = f64::NEG_INFINITY,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn no_uturn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

/// A contiguous stretch of trajectory, ends ordered in time.
struct Subtree {
    p_left: Vec<f64>,
    ps_left: Vec<f64>,
    p_right: Vec<f64>,
    ps_right: Vec<f64>,
    rho: Vec<f64>,
    log_sum_weight: f64,
    proposal: Point,
}

impl Subtree {
    fn leaf(point: &Point, inv_mass: &[f64], log_weight: f64) -> Self {
        let ps = point.p_sharp(inv_mass);
        Self {
            p_left: point.p.clone(),
            ps_left: ps.clone(),
            p_right: point.p.clone(),
            ps_right: ps,
            rho: point.p.clone(),
            log_sum_weight: log_weight,
            proposal: point.clone(),
        }
    }
}

/// U-turn checks on the union of two adjacent subtrees (left precedes right in time).
fn merge_is_valid(left: &Subtree, right: &Subtree, rho: &[f64]) -> bool {
    no_uturn(&left.ps_left, &right.ps_right, rho)
        && no_uturn(&left.ps_left, &right.ps_left, &add(&left.rho, &right.p_left))
        && no_uturn(&left.ps_right, &right.ps_right, &add(&right.rho, &left.p_right))
}

fn merge(left: Subtree, right: Subtree, proposal: Point, log_sum_weight: f64, rho: Vec<f64>) -> Subtree {
    Subtree {
        p_left: left.p_left,
        ps_left: left.ps_left,
        p_right: right.p_right,
        ps_right: right.ps_right,
        rho,
        log_sum_weight,
        proposal,
    }
}

struct TreeBuilder<'a, T: LogDensity> {
    target: &'a T,
    inv_mass: &'a [f64],
    step: f64,
    h0: f64,
    max_energy_error: f64,
    n_leapfrog: usize,
    sum_accept: f64,
    diverging: bool,
}

impl<T: LogDensity> TreeBuilder<'_, T> {
    /// Builds a subtree of `2^depth` leaves starting from `edge` in `direction`.
    /// `edge` is advanced to the far end. Returns `None` if the subtree must
    /// be discarded (divergence or internal U-turn).
    fn build(&mut self, edge: &mut Point, depth: usize, direction: f64, rng: &mut ChaCha8Rng) -> Option<Subtree> {
        if depth == 0 {
            leapfrog(self.target, edge, direction * self.step, self.inv_mass);
            self.n_leapfrog += 1;
            let mut h = edge.energy(self.inv_mass);
            if h.is_nan() {
                h = f64::INFINITY;
            }
            let delta = self.h0 - h;
            self.sum_accept += if delta > 0.0 { 1.0 } else { delta.exp() };
            if h - self.h0 > self.max_energy_error {
                self.diverging = true;
                return None;
            }
            return Some(Subtree::leaf(edge, self.inv_mass, delta));
        }
        let first = self.build(edge, depth - 1, direction, rng)?;
        let second = self.build(edge, depth - 1, direction, rng)?;
        let log_sum_weight = log_add_exp(first.log_sum_weight, second.log_sum_weight);
        let take_second = second.log_sum_weight > log_sum_weight
            || rng.random::<f64>() < (second.log_sum_weight - log_sum_weight).exp();
        let rho = add(&first.rho, &second.rho);
        let (left, right, proposal) = if direction > 0.0 {
            let proposal = if take_second { second.proposal.clone() } else { first.proposal.clone() };
            (first, second, proposal)
        } else {
            let proposal = if take_second { second.proposal.clone() } else { first.proposal.clone() };
            (second, first, proposal)
        };
        if !merge_is_valid(&left, &right, &rho) {
            return None;
        }
        Some(merge(left, right, proposal, log_sum_weight, rho))
    }
}

struct Transition {
    point: Point,
    stats: DrawStats,
}

fn transition<T: LogDensity>(
    target: &T,
    current: &Point,
    step: f64,
    inv_mass: &[f64],
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Transition {
    let mut start = current.clone();
    for (p, m) in start.p.iter_mut().zip(inv_mass) {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        *p = z / m.sqrt();
    }
    let h0 = start.energy(inv_mass);
    let mut builder = TreeBuilder {
        target,
        inv_mass,
        step,
        h0,
        max_energy_error: cfg.max_energy_error,
        n_leapfrog: 0,
        sum_accept: 0.0,
        diverging: false,
    };
    let mut tree = Subtree::leaf(&start, inv_mass, 0.0);
    let mut sample = start.clone();
    let mut fwd = start.clone();
    let mut bwd = start;
    let mut depth = 0;
    while depth < cfg.max_tree_depth {
        let forward = rng.random::<bool>();
        let (edge, direction) = if forward { (&mut fwd, 1.0) } else { (&mut bwd, -1.0) };
        let Some(sub) = builder.build(edge, depth, direction, rng) else {
            break;
        };
        depth += 1;
        if sub.log_sum_weight > tree.log_sum_weight
            || rng.random::<f64>() < (sub.log_sum_weight - tree.log_sum_weight).exp()
        {
            sample = sub.proposal.clone();
        }
        let log_sum_weight = log_add_exp(tree.log_sum_weight, sub.log_sum_weight);
        let rho = add(&tree.rho, &sub.rho);
        let (left, right) = if forward { (tree, sub) } else { (sub, tree) };
        let keep_going = merge_is_valid(&left, &right, &rho);
        let placeholder = left.proposal.clone();
        tree = merge(left, right, placeholder, log_sum_weight, rho);
        if !keep_going {
            break;
        }
    }
    let accept_stat = if builder.n_leapfrog > 0 {
        builder.sum_accept / builder.n_leapfrog as f64
    } else {
        0.0
    };
    let energy = sample.energy(inv_mass);
    Transition {
        point: sample,
        stats: DrawStats {
            accept_stat,
            diverging: builder.diverging,
            tree_depth: depth,
            n_leapfrog: builder.n_leapfrog,
            energy,
            step_size: step,
        },
    }
}

/// Heuristic initial step: double or halve until one leapfrog step's
/// acceptance crosses 0.8.
fn initial_step_size<T: LogDensity>(target: &T, point: &Point, inv_mass: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    let mut step = 1.0;
    let mut start = point.clone();
    for (p, m) in start.p.iter_mut().zip(inv_mass) {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        *p = z / m.sqrt();
    }
    let h0 = start.energy(inv_mass);
    let accept = |step: f64| {
        let mut pt = start.clone();
        leapfrog(target, &mut pt, step, inv_mass);
        let h = pt.energy(inv_mass);
        if h.is_finite() {
            (h0 - h).min(0.0).exp()
        } else {
            0.0
        }
    };
    let direction = if accept(step) > 0.8 { 1.0 } else { -1.0 };
    for _ in 0..100 {
        let a = accept(step);
        if direction > 0.0 && a <= 0.8 || direction < 0.0 && a >= 0.8 {
            break;
        }
        step *= 2f64.powf(direction);
        if !(1e-12..=1e7).contains(&step) {
            break;
        }
    }
    step.clamp(1e-12, 1e7)
}

/// Runs one chain from `init`.
pub fn run_chain<T: LogDensity>(
    target: &T,
    init: Vec<f64>,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
    chain: usize,
) -> Result<ChainOutput> {
    cfg.validate()?;
    let dim = target.dim();
    if init.len() != dim {
        return Err(Error::Dimension(format!(
            "initial point has length {}, target has {dim}",
            init.len()
        )));
    }
    let mut current = Point::new(target, init)?;
    let mut inv_mass = vec![1.0; dim];
    let mut step = initial_step_size(target, &current, &inv_mass, rng);
    let mut dual = DualAveraging::new(step, cfg.target_accept);
    let mut schedule = WarmupSchedule::new(cfg.n_burnin);
    let mut welford = Welford::new(dim);

    let mut warmup_divergences = 0;
    let mut window_accept = 0.0;
    for iter in 0..cfg.n_burnin {
        let t = transition(target, &current, step, &inv_mass, cfg, rng);
        current = t.point;
        warmup_divergences += usize::from(t.stats.diverging);
        window_accept += t.stats.accept_stat;
        step = dual.update(t.stats.accept_stat);
        if cfg.adapt_mass_matrix {
            if schedule.in_window(iter) {
                welford.add(&current.q);
            }
            if schedule.window_closes(iter) && welford.count() > 1 {
                inv_mass = welford.regularized_variance();
                welford.reset();
                step = initial_step_size(target, &current, &inv_mass, rng);
                dual.restart(step);
            }
        }
        if (iter + 1) % 100 == 0 {
            info!(
                "chain {chain} warmup {}/{}: step {step:.4e}, accept {:.3}, divergences {warmup_divergences}",
                iter + 1,
                cfg.n_burnin,
                window_accept / 100.0
            );
            window_accept = 0.0;
        }
    }
    if cfg.n_burnin > 0 {
        if warmup_divergences == cfg.n_burnin {
            return Err(Error::Sampler(format!(
                "chain {chain}: every one of {} burn-in iterations diverged (final step size {step:.3e})",
                cfg.n_burnin
            )));
        }
        step = dual.final_step();
    }

    let mut draws = Vec::with_capacity(cfg.n_samples);
    let mut stats = Vec::with_capacity(cfg.n_samples);
    let mut divergences = 0;
    for iter in 0..cfg.n_samples {
        let t = transition(target, &current, step, &inv_mass, cfg, rng);
        current = t.point;
        divergences += usize::from(t.stats.diverging);
        window_accept += t.stats.accept_stat;
        draws.push(current.q.clone());
        stats.push(t.stats);
        if (iter + 1) % 100 == 0 {
            info!(
                "chain {chain} sampling {}/{}: step {step:.4e}, accept {:.3}, divergences {divergences}",
                iter + 1,
                cfg.n_samples,
                window_accept / 100.0
            );
            window_accept = 0.0;
        }
    }
    Ok(ChainOutput {
        draws,
        stats,
        step_size: step,
        inv_mass,
        warmup_divergences,
    })
}

/// Per-chain random stream derived from `(seed, chain)`.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Runs `cfg.n_chains` chains in parallel. Each chain starts from a
/// Normal(0, init_sd) draw, retried while the initial density is non-finite.
pub fn sample<T: LogDensity>(target: &T, cfg: &SamplerConfig) -> Result<Vec<ChainOutput>> {
    cfg.validate()?;
    (0..cfg.n_chains)
        .into_par_iter()
        .map(|chain| {
            let mut rng = chain_rng(cfg.seed, chain);
            let mut last_err = None;
            for _ in 0..100 {
                let init: Vec<f64> = (0..target.dim())
                    .map(|_| cfg.init_sd * rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect();
                let mut grad = vec![0.0; init.len()];
                match target.logp_and_grad(&init, &mut grad) {
                    Ok(lp) if lp.is_finite() => return run_chain(target, init, cfg, &mut rng, chain),
                    Ok(_) => {
                        last_err = Some(Error::NonFinite {
                            what: "initial log density",
                            index: 0,
                        })
                    }
                    Err(e) => last_err = Some(e),
                }
            }
            Err(Error::Sampler(format!(
                "chain {chain}: no finite initial point found ({})",
                last_err.map(|e| e.to_string()).unwrap_or_default()
            )))
        })
        .collect()
}
