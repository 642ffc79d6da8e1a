//! Separable resampling with half-pixel-centre (align-corners-false)
//! coordinates and edge clamping.

use crate::buffer::{ImageBuffer, MaskBuffer};
use crate::error::{Error, Result};

/// Source position of destination pixel `dst` when mapping `in_len` samples
/// onto `out_len`.
#[inline]
fn source_coord(dst: usize, in_len: usize, out_len: usize) -> f64 {
    (dst as f64 + 0.5) * (in_len as f64 / out_len as f64) - 0.5
}

/// Per-output-sample `(index, weight)` taps along one axis.
type Taps = Vec<Vec<(usize, f64)>>;

fn bilinear_taps(in_len: usize, out_len: usize) -> Taps {
    (0..out_len)
        .map(|d| {
            let s = source_coord(d, in_len, out_len).clamp(0.0, (in_len - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            let f = s - i0 as f64;
            vec![(i0, 1.0 - f), (i1, f)]
        })
        .collect()
}

/// Catmull-Rom (a = -0.5) kernel.
pub fn cubic_kernel(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x.powi(3) - (A + 3.0) * x.powi(2) + 1.0
    } else if x < 2.0 {
        A * x.powi(3) - 5.0 * A * x.powi(2) + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

fn bicubic_taps(in_len: usize, out_len: usize) -> Taps {
    (0..out_len)
        .map(|d| {
            let s = source_coord(d, in_len, out_len);
            let base = s.floor();
            let f = s - base;
            (-1..=2)
                .map(|k| {
                    let idx = (base as i64 + k).clamp(0, in_len as i64 - 1) as usize;
                    (idx, cubic_kernel(k as f64 - f))
                })
                .collect()
        })
        .collect()
}

fn apply_separable(image: &ImageBuffer, out_w: usize, out_h: usize, tx: &Taps, ty: &Taps) -> ImageBuffer {
    let (w, h, ch) = (image.width(), image.height(), image.channels());
    let mut out = ImageBuffer::zeros(out_w, out_h, ch);
    let mut rows = vec![0.0; out_w * h];
    for c in 0..ch {
        let src = image.plane(c);
        for y in 0..h {
            let line = &src[y * w..(y + 1) * w];
            for (x, taps) in tx.iter().enumerate() {
                rows[y * out_w + x] = taps.iter().map(|&(i, wt)| wt * line[i]).sum();
            }
        }
        let dst = out.plane_mut(c);
        for (y, taps) in ty.iter().enumerate() {
            for x in 0..out_w {
                dst[y * out_w + x] = taps.iter().map(|&(i, wt)| wt * rows[i * out_w + x]).sum();
            }
        }
    }
    out
}

fn check_target(out_w: usize, out_h: usize) -> Result<()> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid(format!("target size {out_w}x{out_h} must be >= 1")));
    }
    Ok(())
}

/// Bilinear resize. Same-size resizing returns the input unchanged.
pub fn resize_bilinear(image: &ImageBuffer, out_w: usize, out_h: usize) -> Result<ImageBuffer> {
    check_target(out_w, out_h)?;
    if out_w == image.width() && out_h == image.height() {
        return Ok(image.clone());
    }
    let tx = bilinear_taps(image.width(), out_w);
    let ty = bilinear_taps(image.height(), out_h);
    Ok(apply_separable(image, out_w, out_h, &tx, &ty))
}

/// Catmull-Rom bicubic resize. Same-size resizing returns the input unchanged.
pub fn resize_bicubic(image: &ImageBuffer, out_w: usize, out_h: usize) -> Result<ImageBuffer> {
    check_target(out_w, out_h)?;
    if out_w == image.width() && out_h == image.height() {
        return Ok(image.clone());
    }
    let tx = bicubic_taps(image.width(), out_w);
    let ty = bicubic_taps(image.height(), out_h);
    Ok(apply_separable(image, out_w, out_h, &tx, &ty))
}

/// Masks resize with the same bilinear kernel and stay soft.
pub fn resize_mask(mask: &MaskBuffer, out_w: usize, out_h: usize) -> Result<MaskBuffer> {
    MaskBuffer::from_clamped(resize_bilinear(mask.as_image(), out_w, out_h)?)
}

/// Low-pass filter: bilinear down to `mid` then back up to `out`.
pub fn low_pass_to(image: &ImageBuffer, mid_w: usize, mid_h: usize, out_w: usize, out_h: usize) -> Result<ImageBuffer> {
    if mid_w > image.width() || mid_h > image.height() {
        return Err(Error::invalid(format!(
            "low-pass size {mid_w}x{mid_h} larger than source {}x{}",
            image.width(),
            image.height()
        )));
    }
    let down = resize_bilinear(image, mid_w, mid_h)?;
    resize_bilinear(&down, out_w, out_h)
}

/// Low-pass filter at the original size: down to `target` and back.
pub fn low_pass(image: &ImageBuffer, target_w: usize, target_h: usize) -> Result<ImageBuffer> {
    low_pass_to(image, target_w, target_h, image.width(), image.height())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let img = ImageBuffer::from_fn(5, 4, 2, |c, y, x| (c + y * 7 + x * 3) as f64 * 0.1);
        assert_eq!(resize_bilinear(&img, 5, 4).unwrap(), img);
        assert_eq!(resize_bicubic(&img, 5, 4).unwrap(), img);
    }

    #[test]
    fn upsample_row_by_hand() {
        // Sample positions -0.25, 0.25, 0.75, 1.25 clamp to [0, 1].
        let img = ImageBuffer::from_row(vec![0.0, 1.0]).unwrap();
        let out = resize_bilinear(&img, 4, 1).unwrap();
        assert_eq!(out.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn constant_images_stay_constant() {
        let img = ImageBuffer::filled(7, 5, 3, 0.625);
        for (w, h) in [(1, 1), (3, 2), (14, 10), (29, 3)] {
            for out in [
                resize_bilinear(&img, w, h).unwrap(),
                resize_bicubic(&img, w, h).unwrap(),
            ] {
                assert_eq!((out.width(), out.height()), (w, h));
                assert!(out.data().iter().all(|v| (v - 0.625).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn zero_target_rejected() {
        let img = ImageBuffer::zeros(2, 2, 1);
        assert!(resize_bilinear(&img, 0, 2).is_err());
        assert!(resize_bicubic(&img, 2, 0).is_err());
    }

    #[test]
    fn cubic_kernel_properties() {
        assert_eq!(cubic_kernel(0.0), 1.0);
        assert_eq!(cubic_kernel(1.0), 0.0);
        assert_eq!(cubic_kernel(2.0), 0.0);
        for f in [0.0, 0.1, 0.375, 0.5, 0.9] {
            let s: f64 = (-1..=2).map(|k| cubic_kernel(k as f64 - f)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn low_pass_examples() {
        let img = ImageBuffer::from_fn(6, 5, 1, |_, y, x| (x * y) as f64);
        assert_eq!(low_pass(&img, 6, 5).unwrap(), img);

        let flat = ImageBuffer::filled(8, 8, 2, 0.3);
        assert!(low_pass(&flat, 3, 5)
            .unwrap()
            .data()
            .iter()
            .all(|v| (v - 0.3).abs() < 1e-12));

        // Down-sampling 8 stripes to 4 samples lands every tap halfway
        // between a 0 and a 1, so the row flattens to 0.5.
        let stripes = ImageBuffer::from_row((0..8).map(|i| (i % 2) as f64).collect()).unwrap();
        let lp = low_pass(&stripes, 4, 1).unwrap();
        let (lo, hi) = lp.min_max();
        assert!(hi - lo < 1.0);
        assert!(lp.data().iter().all(|v| (v - 0.5).abs() < 1e-12));

        assert!(low_pass(&stripes, 9, 1).is_err());
    }
}
