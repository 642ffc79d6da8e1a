//! Overlapping tile grids and feathered alpha compositing.

use crate::buffer::{ImageBuffer, Rect};
use crate::error::{Error, Result};

/// Tile offsets along one axis: stride `tile - overlap`, last tile shifted
/// back so it ends at the image edge.
fn axis_offsets(extent: usize, tile: usize, stride: usize) -> Vec<usize> {
    if extent <= tile {
        return vec![0];
    }
    let mut offsets = Vec::new();
    let mut o = 0;
    while o + tile < extent {
        offsets.push(o);
        o += stride;
    }
    let last = extent - tile;
    if offsets.last().is_none_or(|&prev| prev < last) {
        offsets.push(last);
    }
    offsets
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileGrid {
    tile_size: usize,
    overlap: usize,
    width: usize,
    height: usize,
    x_offsets: Vec<usize>,
    y_offsets: Vec<usize>,
}

impl TileGrid {
    /// Grid of `tile_size` squares overlapping by at least `overlap`.
    ///
    /// Edge tiles are shifted inward, never shrunk. An axis shorter than
    /// `tile_size` gets a single tile spanning the whole axis.
    pub fn new(width: usize, height: usize, tile_size: usize, overlap: usize) -> Result<Self> {
        if tile_size <= overlap {
            return Err(Error::invalid(format!(
                "tile size {tile_size} must exceed overlap {overlap}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("grid over an empty image"));
        }
        let stride = tile_size - overlap;
        Ok(Self {
            tile_size,
            overlap,
            width,
            height,
            x_offsets: axis_offsets(width, tile_size, stride),
            y_offsets: axis_offsets(height, tile_size, stride),
        })
    }

    pub fn tile_size(&self) -> usize {
        self.tile_size
    }

    pub fn overlap(&self) -> usize {
        self.overlap
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn x_offsets(&self) -> &[usize] {
        &self.x_offsets
    }

    pub fn y_offsets(&self) -> &[usize] {
        &self.y_offsets
    }

    pub fn tile_w(&self) -> usize {
        self.tile_size.min(self.width)
    }

    pub fn tile_h(&self) -> usize {
        self.tile_size.min(self.height)
    }

    pub fn len(&self) -> usize {
        self.x_offsets.len() * self.y_offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tile rectangles in row-major grid order.
    pub fn rects(&self) -> Vec<Rect> {
        let (tw, th) = (self.tile_w(), self.tile_h());
        self.y_offsets
            .iter()
            .flat_map(|&y| self.x_offsets.iter().map(move |&x| Rect::new(x, y, tw, th)))
            .collect()
    }

    /// Cut `image` into the grid's tiles.
    pub fn split(&self, image: &ImageBuffer) -> Result<Vec<ImageBuffer>> {
        self.check_image(image.width(), image.height())?;
        self.rects().into_iter().map(|r| image.crop(r)).collect()
    }

    fn check_image(&self, w: usize, h: usize) -> Result<()> {
        if (w, h) != (self.width, self.height) {
            return Err(Error::invalid(format!(
                "grid built for {}x{}, image is {w}x{h}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Unnormalised 1-D weights for the tile at `offsets[k]`: linear ramps
/// across each overlap with a neighbour, 1 elsewhere.
fn axis_ramp(offsets: &[usize], k: usize, len: usize) -> Vec<f64> {
    let mut w = vec![1.0f64; len];
    let o = offsets[k];
    if k > 0 {
        let ov = offsets[k - 1] + len - o;
        for (p, v) in w.iter_mut().take(ov).enumerate() {
            *v = (*v).min(p as f64 / ov as f64);
        }
    }
    if k + 1 < offsets.len() {
        let ov = o + len - offsets[k + 1];
        for p in 0..ov.min(len) {
            let i = len - ov + p;
            w[i] = w[i].min(1.0 - p as f64 / ov as f64);
        }
    }
    w
}

/// Per-tile single-channel weights forming a partition of unity.
pub fn feather_weights(grid: &TileGrid) -> Vec<ImageBuffer> {
    let (tw, th) = (grid.tile_w(), grid.tile_h());
    let wx: Vec<Vec<f64>> = (0..grid.x_offsets.len())
        .map(|k| axis_ramp(&grid.x_offsets, k, tw))
        .collect();
    let wy: Vec<Vec<f64>> = (0..grid.y_offsets.len())
        .map(|k| axis_ramp(&grid.y_offsets, k, th))
        .collect();

    let rects = grid.rects();
    let mut raw: Vec<ImageBuffer> = Vec::with_capacity(rects.len());
    let mut total = vec![0.0; grid.width * grid.height];
    for (i, r) in rects.iter().enumerate() {
        let (kx, ky) = (i % grid.x_offsets.len(), i / grid.x_offsets.len());
        let w = ImageBuffer::from_fn(tw, th, 1, |_, y, x| wx[kx][x] * wy[ky][y]);
        for y in 0..th {
            for x in 0..tw {
                total[(r.y + y) * grid.width + r.x + x] += w.get(0, y, x);
            }
        }
        raw.push(w);
    }
    for (w, r) in raw.iter_mut().zip(&rects) {
        for y in 0..th {
            for x in 0..tw {
                let t = total[(r.y + y) * grid.width + r.x + x];
                debug_assert!(t > 0.0, "uncovered pixel at ({}, {})", r.x + x, r.y + y);
                let v = w.get(0, y, x) / t;
                w.set(0, y, x, v);
            }
        }
    }
    raw
}

/// Weighted sum of `tiles` (given in grid order) into one image.
pub fn alpha_composite(tiles: &[ImageBuffer], grid: &TileGrid, weights: &[ImageBuffer]) -> Result<ImageBuffer> {
    let rects = grid.rects();
    if tiles.len() != rects.len() || weights.len() != rects.len() {
        return Err(Error::invalid(format!(
            "grid has {} tiles, got {} tiles and {} weights",
            rects.len(),
            tiles.len(),
            weights.len()
        )));
    }
    let channels = tiles[0].channels();
    let mut out = ImageBuffer::zeros(grid.width, grid.height, channels);
    for ((tile, w), r) in tiles.iter().zip(weights).zip(&rects) {
        if tile.shape() != (channels, r.h, r.w) {
            return Err(Error::ShapeMismatch {
                expected: (channels, r.h, r.w),
                got: tile.shape(),
            });
        }
        if w.shape() != (1, r.h, r.w) {
            return Err(Error::ShapeMismatch {
                expected: (1, r.h, r.w),
                got: w.shape(),
            });
        }
        for c in 0..channels {
            for y in 0..r.h {
                for x in 0..r.w {
                    let i = out.index(c, r.y + y, r.x + x);
                    out.data_mut()[i] += w.get(0, y, x) * tile.get(c, y, x);
                }
            }
        }
    }
    Ok(out)
}
