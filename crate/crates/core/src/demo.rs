//! Sampling a known 1-D mixture with the analytic oracle, for checking the
//! sampler against the closed-form target distribution.

use serde::Serialize;

use crate::blend::ddim_sample;
use crate::buffer::ImageBuffer;
use crate::denoiser::{Conditioning, MixtureOracle, MixtureSpec};
use crate::error::Result;
use crate::noise::{NoiseStream, Purpose};
use crate::schedule::{NoiseSchedule, TimestepPlan};

#[derive(Debug, Clone, Serialize)]
pub struct ModeStats {
    pub center: f64,
    /// Fraction of all samples within three stds of the mode.
    pub mass: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MixtureDemoStats {
    pub samples: usize,
    pub steps: usize,
    pub mean: f64,
    pub modes: Vec<ModeStats>,
    pub histogram: Vec<HistogramBin>,
}

/// Draw `n` samples from the equal-weight pair `±m` (std `s`) by
/// deterministic DDIM over `steps` plan steps, starting from pure noise.
pub fn mixture_demo(m: f64, s: f64, n: usize, steps: usize, seed: u64) -> Result<MixtureDemoStats> {
    let schedule = NoiseSchedule::default();
    let plan = TimestepPlan::uniform(schedule.t_train(), steps)?;
    let oracle = MixtureOracle::new(MixtureSpec::symmetric_pair(m, s), n);
    // Every element of the buffer is an independent sample.
    let x_t = NoiseStream::new(seed, 0, 0).key(0, 0, Purpose::Init).normal(n, 1, 1);
    let x0 = ddim_sample(
        &schedule,
        &oracle,
        &x_t,
        &plan,
        &Conditioning::unconditional(),
        0.0,
        NoiseStream::new(seed, 0, 0),
    )?;
    Ok(summarize(&x0, &[-m, m], s, steps))
}

fn summarize(x: &ImageBuffer, centers: &[f64], s: f64, steps: usize) -> MixtureDemoStats {
    let v = x.data();
    let n = v.len() as f64;
    let modes = centers
        .iter()
        .map(|&c| {
            let near: Vec<f64> = v.iter().copied().filter(|x| (x - c).abs() <= 3.0 * s).collect();
            let k = near.len() as f64;
            let mean = near.iter().sum::<f64>() / k.max(1.0);
            let var = near.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
            ModeStats {
                center: c,
                mass: k / n,
                mean,
                std: var.sqrt(),
            }
        })
        .collect();
    let (lo, hi, bins) = (-2.0, 2.0, 40);
    let width = (hi - lo) / bins as f64;
    let mut histogram: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            lo: lo + i as f64 * width,
            hi: lo + (i + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for &x in v {
        let i = ((x - lo) / width).floor();
        if i >= 0.0 && (i as usize) < bins {
            histogram[i as usize].count += 1;
        }
    }
    MixtureDemoStats {
        samples: v.len(),
        steps,
        mean: v.iter().sum::<f64>() / n,
        modes,
        histogram,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_known_samples() {
        let x = ImageBuffer::from_row(vec![-1.0, -0.9, 1.0, 1.1, 5.0]).unwrap();
        let st = summarize(&x, &[-1.0, 1.0], 0.1, 1);
        assert_eq!(st.modes[0].mass, 0.4);
        assert_eq!(st.modes[1].mass, 0.4);
        assert!((st.modes[0].mean + 0.95).abs() < 1e-12);
        assert_eq!(st.histogram.iter().map(|b| b.count).sum::<usize>(), 4);
    }

    #[test]
    fn small_rollout_is_bimodal() {
        let st = mixture_demo(1.0, 0.1, 400, 20, 3).unwrap();
        let mass: f64 = st.modes.iter().map(|m| m.mass).sum();
        assert!(mass > 0.95, "{st:?}");
        assert!(st.modes.iter().all(|m| m.mass > 0.35));
    }
}
