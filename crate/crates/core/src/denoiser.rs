//! ε-prediction backends.
//!
//! [`DenoiserBackend`] is the one interface every sampling loop talks to.
//! Two implementations live here: [`MixtureOracle`], which computes the
//! exact ε for a known per-element Gaussian mixture, and [`StubDenoiser`],
//! which always predicts zero noise. The remote client lives in
//! [`crate::protocol`].

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::buffer::ImageBuffer;
use crate::error::{Error, Result};

/// Text conditioning passed unchanged to the backend on every call.
///
/// `guidance` is carried for backends that implement classifier-free
/// guidance; the built-in backends ignore it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conditioning {
    pub prompt: String,
    pub guidance: f64,
}

impl Conditioning {
    pub fn new(prompt: impl Into<String>, guidance: f64) -> Result<Self> {
        if guidance.is_nan() || guidance < 0.0 {
            return Err(Error::invalid(format!("guidance must be >= 0, got {guidance}")));
        }
        Ok(Self {
            prompt: prompt.into(),
            guidance,
        })
    }

    pub fn prompt(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            guidance: 0.0,
        }
    }

    pub fn unconditional() -> Self {
        Self::prompt("")
    }
}

/// Noise level of a denoiser call: the timestep and its ᾱ.
///
/// ᾱ travels with `t` so that backends with a different schedule can work
/// on the continuous noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevel {
    pub t: usize,
    pub alpha_bar: f64,
}

pub trait DenoiserBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Square side, in pixels, of the resolution the model was trained at.
    fn native_resolution(&self) -> usize;

    /// Predict the noise contained in `x_t`.
    fn predict_eps(&self, x_t: &ImageBuffer, level: NoiseLevel, cond: &Conditioning) -> Result<ImageBuffer>;
}

impl<D: DenoiserBackend + ?Sized> DenoiserBackend for &D {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn native_resolution(&self) -> usize {
        (**self).native_resolution()
    }
    fn predict_eps(&self, x_t: &ImageBuffer, level: NoiseLevel, cond: &Conditioning) -> Result<ImageBuffer> {
        (**self).predict_eps(x_t, level, cond)
    }
}

impl<D: DenoiserBackend + ?Sized> DenoiserBackend for std::sync::Arc<D> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn native_resolution(&self) -> usize {
        (**self).native_resolution()
    }
    fn predict_eps(&self, x_t: &ImageBuffer, level: NoiseLevel, cond: &Conditioning) -> Result<ImageBuffer> {
        (**self).predict_eps(x_t, level, cond)
    }
}

fn check_level(x_t: &ImageBuffer, level: NoiseLevel) -> Result<()> {
    if !(level.alpha_bar > 0.0 && level.alpha_bar < 1.0) {
        return Err(Error::invalid(format!(
            "denoiser needs 0 < alpha_bar < 1, got {} at t = {}",
            level.alpha_bar, level.t
        )));
    }
    if !x_t.all_finite() {
        return Err(Error::invalid("denoiser input contains non-finite values"));
    }
    Ok(())
}

/// One mixture component. `mean` has either one entry (shared by every
/// element) or one entry per buffer element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub std: f64,
}

/// Per-element Gaussian mixture data distribution: every buffer element is
/// an independent draw from `Σ_k w_k N(mean_k[i], std_k²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    components: Vec<MixtureComponent>,
}

impl MixtureSpec {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if components.iter().any(|c| c.weight.is_nan() || c.weight <= 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "mixture weights must be positive and sum to 1, got sum {total}"
            )));
        }
        for c in &components {
            if c.mean.is_empty() || c.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::invalid("component mean must be nonempty and finite"));
            }
            if !(c.std.is_finite() && c.std >= 0.0) {
                return Err(Error::invalid(format!("component std {} must be >= 0", c.std)));
            }
        }
        Ok(Self { components })
    }

    /// Scalar mixture shared by every element, from `(weight, mean, std)`.
    pub fn scalar(components: &[(f64, f64, f64)]) -> Result<Self> {
        Self::new(
            components
                .iter()
                .map(|&(weight, mean, std)| MixtureComponent {
                    weight,
                    mean: vec![mean],
                    std,
                })
                .collect(),
        )
    }

    /// Equal-weight modes at `±m` with common std `s`.
    pub fn symmetric_pair(m: f64, s: f64) -> Self {
        Self::scalar(&[(0.5, -m, s), (0.5, m, s)]).expect("valid pair")
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    fn check_len(&self, n: usize) -> Result<()> {
        for c in &self.components {
            if c.mean.len() != 1 && c.mean.len() != n {
                return Err(Error::invalid(format!(
                    "component mean has {} entries, buffer has {n}",
                    c.mean.len()
                )));
            }
        }
        Ok(())
    }

    #[inline]
    fn mean_at(c: &MixtureComponent, i: usize) -> f64 {
        if c.mean.len() == 1 {
            c.mean[0]
        } else {
            c.mean[i]
        }
    }

    /// Posterior responsibilities `r_k(x_t)` for element `i`, via log-sum-exp.
    pub fn responsibilities(&self, x_t: f64, i: usize, alpha_bar: f64) -> Vec<f64> {
        let sqrt_ab = alpha_bar.sqrt();
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                let var = alpha_bar * c.std * c.std + (1.0 - alpha_bar);
                let d = x_t - sqrt_ab * Self::mean_at(c, i);
                c.weight.ln() - 0.5 * var.ln() - 0.5 * d * d / var
            })
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    fn posterior_mean_element(&self, x: f64, i: usize, alpha_bar: f64) -> f64 {
        if alpha_bar == 1.0 {
            // x_t is x_0. A continuous component explains it exactly; a pure
            // point-mass mixture snaps to the nearest mode.
            if self.components.iter().any(|c| c.std > 0.0) {
                return x;
            }
            let mut best = (f64::INFINITY, 0.0);
            for c in &self.components {
                let mu = Self::mean_at(c, i);
                if (x - mu).abs() < best.0 {
                    best = ((x - mu).abs(), mu);
                }
            }
            return best.1;
        }
        let sqrt_ab = alpha_bar.sqrt();
        let r = self.responsibilities(x, i, alpha_bar);
        self.components
            .iter()
            .zip(r)
            .map(|(c, r)| {
                let s2 = c.std * c.std;
                let var = alpha_bar * s2 + (1.0 - alpha_bar);
                let mu = Self::mean_at(c, i);
                r * (mu + sqrt_ab * s2 / var * (x - sqrt_ab * mu))
            })
            .sum()
    }

    /// `E[x_0 | x_t]` element by element.
    pub fn posterior_mean(&self, x_t: &ImageBuffer, alpha_bar: f64) -> Result<ImageBuffer> {
        if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
            return Err(Error::invalid(format!("alpha_bar {alpha_bar} outside (0, 1]")));
        }
        self.check_len(x_t.len())?;
        let mut out = x_t.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = self.posterior_mean_element(*v, i, alpha_bar);
        }
        Ok(out)
    }

    /// Mean and variance of the data distribution for element `i`.
    pub fn moments(&self, i: usize) -> (f64, f64) {
        let mean: f64 = self.components.iter().map(|c| c.weight * Self::mean_at(c, i)).sum();
        let second: f64 = self
            .components
            .iter()
            .map(|c| c.weight * (c.std * c.std + Self::mean_at(c, i).powi(2)))
            .sum();
        (mean, second - mean * mean)
    }
}

/// Exact ε-predictor for data drawn from a [`MixtureSpec`].
#[derive(Debug, Clone)]
pub struct MixtureOracle {
    mixture: MixtureSpec,
    native_resolution: usize,
}

impl MixtureOracle {
    pub fn new(mixture: MixtureSpec, native_resolution: usize) -> Self {
        Self {
            mixture,
            native_resolution,
        }
    }

    pub fn mixture(&self) -> &MixtureSpec {
        &self.mixture
    }
}

/// ε from a posterior mean: `(x_t - sqrt(ᾱ)·E[x_0|x_t]) / sqrt(1 - ᾱ)`.
pub fn eps_from_posterior_mean(x_t: &ImageBuffer, mean: &ImageBuffer, alpha_bar: f64) -> Result<ImageBuffer> {
    let (a, s) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x_t.zip_map(mean, |x, m| (x - a * m) / s)
}

impl DenoiserBackend for MixtureOracle {
    fn name(&self) -> &str {
        "oracle"
    }

    fn native_resolution(&self) -> usize {
        self.native_resolution
    }

    fn predict_eps(&self, x_t: &ImageBuffer, level: NoiseLevel, _cond: &Conditioning) -> Result<ImageBuffer> {
        check_level(x_t, level)?;
        let mean = self.mixture.posterior_mean(x_t, level.alpha_bar)?;
        eps_from_posterior_mean(x_t, &mean, level.alpha_bar)
    }
}

/// Predicts zero noise everywhere.
#[derive(Debug, Clone)]
pub struct StubDenoiser {
    pub native_resolution: usize,
}

impl DenoiserBackend for StubDenoiser {
    fn name(&self) -> &str {
        "stub"
    }

    fn native_resolution(&self) -> usize {
        self.native_resolution
    }

    fn predict_eps(&self, x_t: &ImageBuffer, level: NoiseLevel, _cond: &Conditioning) -> Result<ImageBuffer> {
        check_level(x_t, level)?;
        Ok(ImageBuffer::zeros_like(x_t))
    }
}

/// Wraps a backend and counts `predict_eps` calls.
#[derive(Debug)]
pub struct CountingDenoiser<D> {
    inner: D,
    calls: AtomicUsize,
}

impl<D> CountingDenoiser<D> {
    pub fn new(inner: D) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }

    pub fn inner(&self) -> &D {
        &self.inner
    }
}

impl<D: DenoiserBackend> DenoiserBackend for CountingDenoiser<D> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn native_resolution(&self) -> usize {
        self.inner.native_resolution()
    }

    fn predict_eps(&self, x_t: &ImageBuffer, level: NoiseLevel, cond: &Conditioning) -> Result<ImageBuffer> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.predict_eps(x_t, level, cond)
    }
}
