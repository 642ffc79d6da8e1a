//! Noise schedules and the closed-form Gaussian arithmetic of the forward
//! process and the DDIM reverse step.
//!
//! Everything here is a pure function of its inputs. Stochastic operations
//! take the standard-normal noise as an argument instead of owning an RNG.

use crate::buffer::ImageBuffer;
use crate::error::{Error, Result};

/// β and ᾱ tables for a discrete diffusion process.
///
/// Timesteps are 1-based for β (`beta(1)` is the first step) while ᾱ is
/// stored for `t = 0..=t_train` with `alpha_bar(0) == 1`, so `t = 0` is a
/// true identity for the forward marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear β schedule from `beta_start` to `beta_end` inclusive.
    pub fn linear(t_train: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_train == 0 {
            return Err(Error::invalid("t_train must be >= 1"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas = if t_train == 1 {
            vec![beta_start]
        } else {
            let span = beta_end - beta_start;
            (0..t_train)
                .map(|i| beta_start + span * i as f64 / (t_train - 1) as f64)
                .collect()
        };
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::invalid("schedule needs at least one beta"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::invalid(format!("beta {b} outside (0, 1)")));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        for b in &betas {
            let prev = *alpha_bars.last().unwrap();
            alpha_bars.push(prev * (1.0 - b));
        }
        Ok(Self { betas, alpha_bars })
    }

    pub fn t_train(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// β_t for `1 <= t <= t_train`.
    pub fn beta(&self, t: usize) -> f64 {
        assert!(t >= 1 && t <= self.t_train(), "beta index {t} out of range");
        self.betas[t - 1]
    }

    /// ᾱ_t for `0 <= t <= t_train`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t > self.t_train() {
            return Err(Error::invalid(format!(
                "timestep {t} beyond t_train = {}",
                self.t_train()
            )));
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("default schedule is valid")
    }
}

/// `sqrt(ab)·x0 + sqrt(1 - ab)·noise`, returning `x0` itself when `ab == 1`.
pub fn forward_marginal_at(x0: &ImageBuffer, alpha_bar: f64, noise: &ImageBuffer) -> Result<ImageBuffer> {
    x0.ensure_same_shape(noise)?;
    if alpha_bar == 1.0 {
        return Ok(x0.clone());
    }
    let (a, s) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x0.zip_map(noise, |x, n| a * x + s * n)
}

/// Sample of q(x_t | x_0) given standard-normal `noise`.
pub fn forward_marginal(
    schedule: &NoiseSchedule,
    x0: &ImageBuffer,
    t: usize,
    noise: &ImageBuffer,
) -> Result<ImageBuffer> {
    schedule.check_t(t)?;
    forward_marginal_at(x0, schedule.alpha_bar(t), noise)
}

/// One forward kernel with variance `beta`: `sqrt(1 - beta)·x + sqrt(beta)·noise`.
pub fn forward_kernel(x_prev: &ImageBuffer, beta: f64, noise: &ImageBuffer) -> Result<ImageBuffer> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!("beta {beta} outside [0, 1]")));
    }
    x_prev.ensure_same_shape(noise)?;
    let (a, s) = ((1.0 - beta).sqrt(), beta.sqrt());
    x_prev.zip_map(noise, |x, n| a * x + s * n)
}

/// Sample of q(x_t | x_{t-1}).
pub fn forward_step(
    schedule: &NoiseSchedule,
    x_prev: &ImageBuffer,
    t: usize,
    noise: &ImageBuffer,
) -> Result<ImageBuffer> {
    if t == 0 {
        return Err(Error::invalid("forward_step needs t >= 1"));
    }
    schedule.check_t(t)?;
    forward_kernel(x_prev, schedule.beta(t), noise)
}

/// Forward kernel between two arbitrary levels `t_from < t_to`, with the
/// aggregated variance `1 - ᾱ_to / ᾱ_from`.
pub fn forward_jump(
    schedule: &NoiseSchedule,
    x: &ImageBuffer,
    t_from: usize,
    t_to: usize,
    noise: &ImageBuffer,
) -> Result<ImageBuffer> {
    if t_to <= t_from {
        return Err(Error::invalid(format!("forward jump needs {t_from} < {t_to}")));
    }
    schedule.check_t(t_to)?;
    let beta = 1.0 - schedule.alpha_bar(t_to) / schedule.alpha_bar(t_from);
    forward_kernel(x, beta, noise)
}

/// Descending subsequence of training timesteps visited by the sampler.
///
/// Entries are zero-based training indices in `[0, t_train - 1]`. The
/// sampler evaluates step `i` at noise level `level(i) = steps[i] + 1` and
/// moves to `next_level(i)`, which is `0` (clean data) after the last entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestepPlan {
    steps: Vec<usize>,
}

impl TimestepPlan {
    /// `n_steps` indices spaced by `floor(t_train / n_steps)`, ending at 0.
    pub fn uniform(t_train: usize, n_steps: usize) -> Result<Self> {
        if n_steps == 0 || n_steps > t_train {
            return Err(Error::invalid(format!(
                "need 1 <= n_steps <= t_train, got n_steps = {n_steps}, t_train = {t_train}"
            )));
        }
        let stride = t_train / n_steps;
        Ok(Self {
            steps: (0..n_steps).rev().map(|i| i * stride).collect(),
        })
    }

    pub fn from_steps(steps: Vec<usize>) -> Result<Self> {
        if steps.is_empty() || *steps.last().unwrap() != 0 {
            return Err(Error::invalid("plan must be nonempty and end at 0"));
        }
        if steps.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::invalid("plan must be strictly decreasing"));
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn level(&self, i: usize) -> usize {
        self.steps[i] + 1
    }

    pub fn next_level(&self, i: usize) -> usize {
        self.steps.get(i + 1).map_or(0, |s| s + 1)
    }

    /// Number of trailing steps run when starting at `fraction` of the plan,
    /// rounding fractional counts up.
    pub fn tail_len(&self, fraction: f64) -> usize {
        let n = (fraction * self.len() as f64 - 1e-9).ceil().max(0.0) as usize;
        n.min(self.len())
    }
}

/// One DDIM update from level `t` to `t_prev` given the predicted noise.
///
/// With `eta == 0` the step is deterministic and `noise` may be `None`.
#[allow(clippy::too_many_arguments)]
pub fn ddim_step(
    schedule: &NoiseSchedule,
    x_t: &ImageBuffer,
    eps_hat: &ImageBuffer,
    t: usize,
    t_prev: usize,
    eta: f64,
    noise: Option<&ImageBuffer>,
) -> Result<ImageBuffer> {
    if t_prev >= t {
        return Err(Error::invalid(format!(
            "ddim step needs t_prev < t, got {t_prev} >= {t}"
        )));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::invalid(format!("eta {eta} outside [0, 1]")));
    }
    schedule.check_t(t)?;
    x_t.ensure_same_shape(eps_hat)?;

    let ab_t = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t_prev);
    let sigma = eta * ((1.0 - ab_prev) / (1.0 - ab_t)).sqrt() * (1.0 - ab_t / ab_prev).sqrt();
    let (sqrt_ab_t, sqrt_one_minus_ab_t) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
    let sqrt_ab_prev = ab_prev.sqrt();
    let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();

    let mut out = x_t.zip_map(eps_hat, |x, e| {
        let x0 = (x - sqrt_one_minus_ab_t * e) / sqrt_ab_t;
        sqrt_ab_prev * x0 + dir * e
    })?;
    if sigma > 0.0 {
        let noise = noise.ok_or_else(|| Error::invalid("stochastic ddim step needs noise"))?;
        out.ensure_same_shape(noise)?;
        for (o, n) in out.data_mut().iter_mut().zip(noise.data()) {
            *o += sigma * n;
        }
    }
    Ok(out)
}

/// `(x_t - sqrt(1 - ᾱ_t)·eps) / sqrt(ᾱ_t)`.
pub fn predict_x0(schedule: &NoiseSchedule, x_t: &ImageBuffer, eps_hat: &ImageBuffer, t: usize) -> Result<ImageBuffer> {
    schedule.check_t(t)?;
    let ab = schedule.alpha_bar(t);
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    x_t.zip_map(eps_hat, |x, e| (x - s * e) / a)
}
