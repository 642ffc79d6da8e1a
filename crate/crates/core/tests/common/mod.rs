#![allow(dead_code)]

pub mod server;

use msbd::codec::DecoderOptConfig;
use msbd::denoiser::{MixtureOracle, MixtureSpec};
use msbd::pipeline::{PipelineConfig, StageConfig};
use msbd::{ImageBuffer, MaskBuffer};

/// Smooth colour gradient with a diagonal stripe pattern.
pub fn scene(w: usize, h: usize, channels: usize) -> ImageBuffer {
    ImageBuffer::from_fn(w, h, channels, |c, y, x| {
        let g = (x as f64 / w as f64 + y as f64 / h as f64) * 0.4;
        let stripe = if (x + 2 * y + 3 * c) % 9 < 3 { 0.2 } else { 0.0 };
        (0.1 + g + stripe + 0.05 * c as f64).min(1.0)
    })
}

/// Box mask with a one-pixel soft rim.
pub fn box_mask(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> MaskBuffer {
    MaskBuffer::from_fn(w, h, |y, x| {
        let inside = |a: usize, lo: usize, hi: usize| a >= lo && a < hi;
        if inside(x, x0, x1) && inside(y, y0, y1) {
            1.0
        } else if inside(x, x0.saturating_sub(1), x1 + 1) && inside(y, y0.saturating_sub(1), y1 + 1) {
            0.5
        } else {
            0.0
        }
    })
}

pub fn oracle(native: usize) -> MixtureOracle {
    let mix = MixtureSpec::scalar(&[(0.5, 0.25, 0.08), (0.5, 0.75, 0.08)]).unwrap();
    MixtureOracle::new(mix, native)
}

/// A desk-sized configuration: two refinement stages, the last one tiled.
pub fn small_config() -> PipelineConfig {
    PipelineConfig {
        batch_b: 2,
        repaint_r: 1,
        margin: 4,
        sampler_steps: 10,
        seed: 11,
        stages: vec![
            StageConfig::intermediate(24, 0.4),
            StageConfig::segmented_native(0.25, 16, 4),
        ],
        decoder_opt: DecoderOptConfig {
            steps: 5,
            ..Default::default()
        },
        ..Default::default()
    }
}
