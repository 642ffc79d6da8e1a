use crate::buffer::{ImageBuffer, MaskBuffer, Rect};
use crate::error::{Error, Result};

/// Place a span of length `len` centred on `[lo, lo + want)` inside
/// `[0, extent)`.
fn place(lo: i64, want: i64, len: i64, extent: i64) -> usize {
    let start = lo - (len - want) / 2;
    start.clamp(0, extent - len) as usize
}

/// Smallest square holding the mask's bounding box grown by `margin`,
/// shifted to stay inside the image.
///
/// The side is only reduced along an axis where the image itself is
/// shorter, which makes the rectangle non-square in that case.
pub fn square_rect_around_mask(mask: &MaskBuffer, margin: usize) -> Result<Rect> {
    let bbox = mask.support_bbox().ok_or(Error::EmptyMask)?;
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let margin = margin as i64;
    let (ex, ey) = (bbox.x as i64 - margin, bbox.y as i64 - margin);
    let (ew, eh) = (bbox.w as i64 + 2 * margin, bbox.h as i64 + 2 * margin);
    let side = ew.max(eh);
    let (sw, sh) = (side.min(w), side.min(h));
    Ok(Rect::new(
        place(ex, ew, sw, w),
        place(ey, eh, sh, h),
        sw as usize,
        sh as usize,
    ))
}

/// Crop image and mask to [`square_rect_around_mask`].
pub fn crop_square_around_mask(
    image: &ImageBuffer,
    mask: &MaskBuffer,
    margin: usize,
) -> Result<(Rect, ImageBuffer, MaskBuffer)> {
    mask.ensure_matches(image)?;
    let rect = square_rect_around_mask(mask, margin)?;
    Ok((rect, image.crop(rect)?, mask.crop(rect)?))
}
