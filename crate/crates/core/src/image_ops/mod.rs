//! Raster geometry: cropping around the mask, bilinear and bicubic
//! resampling, the low-pass filter, tile grids and feathered compositing.

mod crop;
mod resample;
mod tiles;

pub use crop::{crop_square_around_mask, square_rect_around_mask};
pub use resample::{cubic_kernel, low_pass, low_pass_to, resize_bicubic, resize_bilinear, resize_mask};
pub use tiles::{alpha_composite, feather_weights, TileGrid};

use crate::buffer::{ImageBuffer, MaskBuffer};
use crate::error::Result;

/// `m·x + (1 - m)·background`, with the single-channel mask broadcast over
/// channels.
pub fn blend_masked(x: &ImageBuffer, background: &ImageBuffer, mask: &MaskBuffer) -> Result<ImageBuffer> {
    x.ensure_same_shape(background)?;
    mask.ensure_matches(x)?;
    let mut out = x.clone();
    let m = mask.values();
    for c in 0..x.channels() {
        let bg = background.plane(c);
        for (i, v) in out.plane_mut(c).iter_mut().enumerate() {
            *v = m[i] * *v + (1.0 - m[i]) * bg[i];
        }
    }
    Ok(out)
}

/// Output size with long edge `long_edge`, preserving aspect ratio.
pub fn size_for_long_edge(width: usize, height: usize, long_edge: usize) -> (usize, usize) {
    if width >= height {
        let h = (height as f64 * long_edge as f64 / width as f64).round().max(1.0) as usize;
        (long_edge, h)
    } else {
        let w = (width as f64 * long_edge as f64 / height as f64).round().max(1.0) as usize;
        (w, long_edge)
    }
}
