//! Multi-stage blended diffusion image editing.
//!
//! The engine edits a masked region of a large image by running blended
//! diffusion at the denoiser's native resolution, then refining the result
//! through progressively larger stages (super-resolution, SDEdit-style
//! partial denoising and tiled processing at full resolution). Denoiser,
//! upscaler and scorer are pluggable; [`denoiser::MixtureOracle`] is an
//! exact analytic denoiser used for verification.

pub mod blend;
pub mod buffer;
pub mod codec;
pub mod demo;
pub mod denoiser;
pub mod error;
pub mod image_ops;
pub mod noise;
pub mod pipeline;
pub mod png_io;
pub mod protocol;
pub mod rerank;
pub mod schedule;
pub mod upscaler;

pub use buffer::{ImageBuffer, MaskBuffer, Rect};
pub use error::{Error, Result};
