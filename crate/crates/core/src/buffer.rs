//! Float rasters shared by every stage of the editor.
//!
//! Pixels are stored planar (channel-major), each plane row-major, which is
//! the same `[channels, height, width]` order used on the wire.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be >= 1, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "expected {} values for {width}x{height}x{channels}, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0 && channels > 0, "empty image");
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn zeros_like(other: &ImageBuffer) -> Self {
        Self::zeros(other.width, other.height, other.channels)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut img = Self::zeros(width, height, channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    let i = img.index(c, y, x);
                    img.data[i] = f(c, y, x);
                }
            }
        }
        img
    }

    /// A single-row, single-channel buffer holding `values`.
    pub fn from_row(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(n, 1, 1, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(channels, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn ensure_same_shape(&self, other: &ImageBuffer) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                got: other.shape(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageBuffer {
        ImageBuffer {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Elementwise `f(self, other)`; shapes must match.
    pub fn zip_map(&self, other: &ImageBuffer, f: impl Fn(f64, f64) -> f64) -> Result<ImageBuffer> {
        self.ensure_same_shape(other)?;
        Ok(ImageBuffer {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            ..*self
        })
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn max_abs_diff(&self, other: &ImageBuffer) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy of the `rect` region.
    pub fn crop(&self, rect: Rect) -> Result<ImageBuffer> {
        if !rect.fits_in(self.width, self.height) {
            return Err(Error::invalid(format!(
                "crop {rect:?} exceeds {}x{} image",
                self.width, self.height
            )));
        }
        Ok(ImageBuffer::from_fn(rect.w, rect.h, self.channels, |c, y, x| {
            self.get(c, rect.y + y, rect.x + x)
        }))
    }

    /// Write `patch` into this image at `rect`'s origin.
    pub fn paste(&mut self, patch: &ImageBuffer, rect: Rect) -> Result<()> {
        if patch.width != rect.w || patch.height != rect.h || patch.channels != self.channels {
            return Err(Error::ShapeMismatch {
                expected: (self.channels, rect.h, rect.w),
                got: patch.shape(),
            });
        }
        if !rect.fits_in(self.width, self.height) {
            return Err(Error::invalid(format!(
                "paste {rect:?} exceeds {}x{} image",
                self.width, self.height
            )));
        }
        for c in 0..self.channels {
            for y in 0..rect.h {
                let src = &patch.plane(c)[y * rect.w..(y + 1) * rect.w];
                let start = self.index(c, rect.y + y, rect.x);
                self.data[start..start + rect.w].copy_from_slice(src);
            }
        }
        Ok(())
    }

    /// Keep only the listed channels, in order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<ImageBuffer> {
        let mut data = Vec::with_capacity(channels.len() * self.width * self.height);
        for &c in channels {
            if c >= self.channels {
                return Err(Error::invalid(format!("channel {c} out of range")));
            }
            data.extend_from_slice(self.plane(c));
        }
        ImageBuffer::new(self.width, self.height, channels.len(), data)
    }

    /// Stack the channels of `self` followed by those of `other`.
    pub fn concat_channels(&self, other: &ImageBuffer) -> Result<ImageBuffer> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::ShapeMismatch {
                expected: (other.channels, self.height, self.width),
                got: other.shape(),
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        ImageBuffer::new(self.width, self.height, self.channels + other.channels, data)
    }
}

/// Soft single-channel mask, `1` = edit, `0` = keep.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskBuffer(ImageBuffer);

impl MaskBuffer {
    pub fn new(image: ImageBuffer) -> Result<Self> {
        if image.channels() != 1 {
            return Err(Error::invalid(format!(
                "mask must have one channel, got {}",
                image.channels()
            )));
        }
        if let Some(v) = image.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("mask value {v} outside [0, 1]")));
        }
        Ok(Self(image))
    }

    /// Build from arbitrary values, clamping into `[0, 1]`.
    pub fn from_clamped(image: ImageBuffer) -> Result<Self> {
        Self::new(image.map(|v| v.clamp(0.0, 1.0)))
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self(ImageBuffer::filled(width, height, 1, value.clamp(0.0, 1.0)))
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        Self(ImageBuffer::from_fn(width, height, 1, |_, y, x| {
            f(y, x).clamp(0.0, 1.0)
        }))
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.0.get(0, y, x)
    }

    pub fn values(&self) -> &[f64] {
        self.0.data()
    }

    pub fn as_image(&self) -> &ImageBuffer {
        &self.0
    }

    pub fn into_image(self) -> ImageBuffer {
        self.0
    }

    pub fn has_support(&self) -> bool {
        self.0.data().iter().any(|&v| v > 0.0)
    }

    /// Tight bounding box of the nonzero pixels.
    pub fn support_bbox(&self) -> Option<Rect> {
        let (w, h) = (self.width(), self.height());
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..h {
            for x in 0..w {
                if self.at(y, x) > 0.0 {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        (x0 != usize::MAX).then(|| Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }

    pub fn crop(&self, rect: Rect) -> Result<MaskBuffer> {
        Ok(MaskBuffer(self.0.crop(rect)?))
    }

    /// Check that this mask can gate `image`.
    pub fn ensure_matches(&self, image: &ImageBuffer) -> Result<()> {
        if self.width() != image.width() || self.height() != image.height() {
            return Err(Error::ShapeMismatch {
                expected: (1, image.height(), image.width()),
                got: self.0.shape(),
            });
        }
        Ok(())
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub const fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.w > 0 && self.h > 0 && self.x + self.w <= width && self.y + self.h <= height
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }
}
