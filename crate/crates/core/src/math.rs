//! Small numerical helpers shared across modules.

use statrs::function::gamma::ln_gamma;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Logistic sigmoid, evaluated without overflow for large `|x|`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Bernoulli log-likelihood of `outcome` under `p`, with `p` clamped.
///
/// Returns the value and its derivative with respect to `p` (zero when the
/// clamp is active).
#[inline]
pub fn bernoulli_ll(p: f64, outcome: bool) -> (f64, f64) {
    let clamped = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let active = clamped == p;
    if outcome {
        (clamped.ln(), if active { 1.0 / clamped } else { 0.0 })
    } else {
        ((1.0 - clamped).ln(), if active { -1.0 / (1.0 - clamped) } else { 0.0 })
    }
}

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Normal log-density with mean `mean` and standard deviation `sd`.
#[inline]
pub fn normal_ln_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

pub fn ln_beta_fn(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Log normalizing constant of a symmetric Dirichlet with `dim` components.
pub fn ln_dirichlet_norm(concentration: f64, dim: usize) -> f64 {
    if dim <= 1 {
        return 0.0;
    }
    ln_gamma(concentration * dim as f64) - dim as f64 * ln_gamma(concentration)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}
