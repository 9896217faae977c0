//! L2-regularized logistic regression by gradient ascent.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::baselines::forest::check_binary_training;
use crate::error::{Error, Result};
use crate::math::{log_sigmoid, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticConfig {
    /// Penalty `l2 / 2 * |w|²`; the intercept is not penalized.
    pub l2: f64,
    pub max_iter: usize,
    /// Stop once the gradient norm falls below this.
    pub tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            l2: 1.0,
            max_iter: 200_000,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub intercept: f64,
    pub weights: Vec<f64>,
    pub iterations: usize,
    /// Penalized log-likelihood after each step.
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}

struct Problem<'a> {
    x: &'a DMatrix<f64>,
    y: Vec<f64>,
    l2: f64,
}

impl Problem<'_> {
    /// Parameters are `[intercept, w...]`.
    fn eta(&self, theta: &DVector<f64>) -> DVector<f64> {
        let w = theta.rows(1, self.x.ncols());
        self.x * w + DVector::from_element(self.x.nrows(), theta[0])
    }

    fn objective(&self, theta: &DVector<f64>) -> f64 {
        let eta = self.eta(theta);
        let ll: f64 = eta
            .iter()
            .zip(&self.y)
            .map(|(&e, &y)| if y > 0.5 { log_sigmoid(e) } else { log_sigmoid(-e) })
            .sum();
        ll - 0.5 * self.l2 * theta.rows(1, self.x.ncols()).norm_squared()
    }

    fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        let eta = self.eta(theta);
        let r = DVector::from_iterator(eta.len(), eta.iter().zip(&self.y).map(|(&e, &y)| y - sigmoid(e)));
        let mut g = DVector::zeros(theta.len());
        g[0] = r.sum();
        let gw = self.x.transpose() * &r - self.l2 * theta.rows(1, self.x.ncols());
        g.rows_mut(1, self.x.ncols()).copy_from(&gw);
        g
    }
}

/// Fits by gradient ascent with step `1 / L`, where `L = λmax(ZᵀZ) / 4 + l2`
/// bounds the curvature (`Z` is the design with an intercept column). With
/// that step every iteration increases the objective.
pub fn train_logistic(features: &DMatrix<f64>, labels: &[bool], config: &LogisticConfig) -> Result<LogisticModel> {
    check_binary_training(features, labels)?;
    if !(config.l2 >= 0.0) {
        return Err(Error::Invalid("l2 penalty must be non-negative".into()));
    }
    let p = Problem {
        x: features,
        y: labels.iter().map(|&l| f64::from(u8::from(l))).collect(),
        l2: config.l2,
    };
    let (n, d) = (features.nrows(), features.ncols());
    let z = DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { features[(i, j - 1)] });
    let lambda_max = SymmetricEigen::new(z.transpose() * &z).eigenvalues.max();
    let step = 1.0 / (lambda_max / 4.0 + config.l2);

    let mut theta = DVector::zeros(d + 1);
    let mut trace = vec![p.objective(&theta)];
    for iter in 0..config.max_iter {
        let g = p.gradient(&theta);
        if g.norm() < config.tol {
            return Ok(LogisticModel {
                intercept: theta[0],
                weights: theta.rows(1, d).iter().copied().collect(),
                iterations: iter,
                objective_trace: trace,
            });
        }
        theta += step * g;
        trace.push(p.objective(&theta));
    }
    Err(Error::NoConvergence(config.max_iter))
}

impl LogisticModel {
    pub fn predict_proba(&self, features: &DMatrix<f64>) -> Result<Vec<f64>> {
        if features.ncols() != self.weights.len() {
            return Err(Error::Dimension(format!(
                "logistic model expects {} features, got {}",
                self.weights.len(),
                features.ncols()
            )));
        }
        Ok((0..features.nrows())
            .map(|i| {
                let eta: f64 = self.intercept
                    + features.row(i).iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>();
                sigmoid(eta)
            })
            .collect())
    }
}
