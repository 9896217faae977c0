//! Warmup adaptation: dual-averaging step size and a windowed diagonal metric.

/// Nesterov dual averaging of `ln(step size)` toward a target acceptance rate.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    target: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    mu: f64,
    count: f64,
    h_bar: f64,
    log_step: f64,
    log_step_bar: f64,
}

impl DualAveraging {
    pub fn new(initial_step: f64, target: f64) -> Self {
        Self {
            target,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            mu: (10.0 * initial_step).ln(),
            count: 0.0,
            h_bar: 0.0,
            log_step: initial_step.ln(),
            log_step_bar: 0.0,
        }
    }

    /// Restarts the averaging around a new initial step size.
    pub fn restart(&mut self, initial_step: f64) {
        *self = Self::new(initial_step, self.target);
    }

    /// Feeds one acceptance statistic; returns the next step size to use.
    pub fn update(&mut self, accept_stat: f64) -> f64 {
        let accept = if accept_stat.is_finite() {
            accept_stat.clamp(0.0, 1.0)
        } else {
            0.0
        };
        self.count += 1.0;
        let w = 1.0 / (self.count + self.t0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept);
        self.log_step = self.mu - self.count.sqrt() / self.gamma * self.h_bar;
        let eta = self.count.powf(-self.kappa);
        self.log_step_bar = eta * self.log_step + (1.0 - eta) * self.log_step_bar;
        self.log_step.exp()
    }

    pub fn current(&self) -> f64 {
        self.log_step.exp()
    }

    /// Averaged step size, used once warmup ends.
    pub fn final_step(&self) -> f64 {
        if self.count == 0.0 {
            self.log_step.exp()
        } else {
            self.log_step_bar.exp()
        }
    }
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone)]
pub struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    /// Regularized variance estimate, shrunk toward 1e-3 for short windows.
    pub fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|s| {
                let var = if self.n > 1 { s / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }

    pub fn reset(&mut self) {
        self.n = 0;
        self.mean.iter_mut().for_each(|m| *m = 0.0);
        self.m2.iter_mut().for_each(|m| *m = 0.0);
    }
}

/// Stan-style warmup schedule: a fast initial buffer, doubling slow windows
/// for metric estimation, and a fast terminal buffer.
#[derive(Debug, Clone)]
pub struct WarmupSchedule {
    init_buffer: usize,
    term_buffer: usize,
    n_warmup: usize,
    window_end: usize,
    window_size: usize,
}

impl WarmupSchedule {
    pub fn new(n_warmup: usize) -> Self {
        let (mut init, mut term, mut base) = (75usize, 50usize, 25usize);
        if n_warmup < init + term + base {
            init = n_warmup * 15 / 100;
            term = n_warmup / 10;
            base = n_warmup.saturating_sub(init + term);
        }
        Self {
            init_buffer: init,
            term_buffer: term,
            n_warmup,
            window_end: init + base,
            window_size: base,
        }
    }

    /// Whether iteration `iter` (0-based) lies in a slow metric window.
    pub fn in_window(&self, iter: usize) -> bool {
        iter >= self.init_buffer && iter < self.n_warmup.saturating_sub(self.term_buffer)
    }

    /// Whether iteration `iter` closes the current slow window. Advances the
    /// schedule when it does.
    pub fn window_closes(&mut self, iter: usize) -> bool {
        if self.window_size == 0 || iter + 1 != self.window_end {
            return false;
        }
        let slow_end = self.n_warmup.saturating_sub(self.term_buffer);
        self.window_size *= 2;
        let mut next_end = self.window_end + self.window_size;
        // Stretch the next window to the end of the slow phase if the one
        // after it would not fit.
        if next_end + 2 * self.window_size > slow_end {
            next_end = slow_end;
        }
        self.window_end = next_end;
        true
    }
}
