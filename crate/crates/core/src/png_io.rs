//! PNG reading and writing.
//!
//! Samples map to `value / maxval` on read and back with rounding on write
//! (values are clamped to [0, 1] first). Gray, gray+alpha, RGB and RGBA at
//! 8 or 16 bits are supported; palette and sub-byte images are expanded.

use std::io::{BufWriter, Read};
use std::path::Path;

use crate::buffer::{ImageBuffer, MaskBuffer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

fn image_err(e: impl std::fmt::Display) -> Error {
    Error::Image(e.to_string())
}

pub fn decode_png(reader: impl Read) -> Result<ImageBuffer> {
    let mut decoder = png::Decoder::new(reader);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(image_err)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(image_err)?;
    let bytes = &buf[..info.buffer_size()];
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(Error::Image("palette image was not expanded".into())),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let samples: Vec<f64> = match info.bit_depth {
        png::BitDepth::Eight => bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        png::BitDepth::Sixteen => bytes
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0)
            .collect(),
        other => return Err(Error::Image(format!("unexpected bit depth {other:?} after expansion"))),
    };
    // Interleaved HWC to planar CHW.
    let mut out = ImageBuffer::zeros(w, h, channels);
    for y in 0..h {
        for x in 0..w {
            for c in 0..channels {
                out.set(c, y, x, samples[(y * w + x) * channels + c]);
            }
        }
    }
    Ok(out)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    decode_png(std::io::BufReader::new(file)).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Mask from an image: gray as-is, the mean of the colour channels
/// otherwise. Alpha is ignored.
pub fn mask_from_image(image: &ImageBuffer) -> Result<MaskBuffer> {
    let colour = match image.channels() {
        1 | 2 => 1,
        3 | 4 => 3,
        n => return Err(Error::Image(format!("cannot use a {n}-channel image as a mask"))),
    };
    let (w, h) = (image.width(), image.height());
    MaskBuffer::from_clamped(ImageBuffer::from_fn(w, h, 1, |_, y, x| {
        (0..colour).map(|c| image.get(c, y, x)).sum::<f64>() / colour as f64
    }))
}

/// Read a mask: 0 keeps a pixel, full scale edits it, values in between
/// blend softly.
pub fn read_mask(path: impl AsRef<Path>) -> Result<MaskBuffer> {
    mask_from_image(&read_image(path)?)
}

pub fn encode_png(image: &ImageBuffer, depth: BitDepth) -> Result<Vec<u8>> {
    let colour = match image.channels() {
        1 => png::ColorType::Grayscale,
        2 => png::ColorType::GrayscaleAlpha,
        3 => png::ColorType::Rgb,
        4 => png::ColorType::Rgba,
        n => return Err(Error::Image(format!("cannot write a {n}-channel image as PNG"))),
    };
    let (w, h, channels) = (image.width(), image.height(), image.channels());
    let mut samples = Vec::with_capacity(w * h * channels * 2);
    for y in 0..h {
        for x in 0..w {
            for c in 0..channels {
                let v = image.get(c, y, x).clamp(0.0, 1.0);
                match depth {
                    BitDepth::Eight => samples.push((v * 255.0).round() as u8),
                    BitDepth::Sixteen => samples.extend_from_slice(&((v * 65535.0).round() as u16).to_be_bytes()),
                }
            }
        }
    }
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, w as u32, h as u32);
        encoder.set_color(colour);
        encoder.set_depth(match depth {
            BitDepth::Eight => png::BitDepth::Eight,
            BitDepth::Sixteen => png::BitDepth::Sixteen,
        });
        let mut writer = encoder.write_header().map_err(image_err)?;
        writer.write_image_data(&samples).map_err(image_err)?;
        writer.finish().map_err(image_err)?;
    }
    Ok(out)
}

pub fn write_image(path: impl AsRef<Path>, image: &ImageBuffer, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(image, depth)?;
    let file = std::fs::File::create(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    std::io::Write::write_all(&mut w, &bytes)?;
    std::io::Write::flush(&mut w)?;
    Ok(())
}
