//! Toy latent codec and per-image decoder optimization.
//!
//! The encoder is `factor`×`factor` average pooling. The decoder upsamples
//! the latent bilinearly, convolves each channel with a learnable k×k kernel
//! (edge-replicated) and applies a per-channel gain and bias. With the
//! initial parameters (delta kernel, gain 1, bias 0) `decode(encode(x))` is
//! plain pool-then-bilinear reconstruction, which loses sharp detail; the
//! decoder optimization pulls the reconstruction back toward the input
//! outside the mask while keeping the edit inside it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::buffer::{ImageBuffer, MaskBuffer};
use crate::error::{Error, Result};
use crate::image_ops::{alpha_composite, feather_weights, resize_bilinear, TileGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyCodec {
    pub factor: usize,
    pub kernel_size: usize,
}

impl Default for ToyCodec {
    fn default() -> Self {
        Self {
            factor: 2,
            kernel_size: 7,
        }
    }
}

/// Encoded image: the latent plus the pixel size it decodes back to.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub z: ImageBuffer,
    pub width: usize,
    pub height: usize,
}

/// Learnable decoder weights, per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    kernel_size: usize,
    channels: usize,
    /// `channels` kernels of `kernel_size²` taps, row-major.
    pub kernels: Vec<f64>,
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DecoderParams {
    /// Delta kernels, unit gain, zero bias.
    pub fn identity(channels: usize, kernel_size: usize) -> Self {
        let k2 = kernel_size * kernel_size;
        let mut kernels = vec![0.0; channels * k2];
        for c in 0..channels {
            kernels[c * k2 + k2 / 2] = 1.0;
        }
        Self {
            kernel_size,
            channels,
            kernels,
            gain: vec![1.0; channels],
            bias: vec![0.0; channels],
        }
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.kernels.len() + self.gain.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flatten as `[kernels.., gain.., bias..]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.kernels);
        v.extend_from_slice(&self.gain);
        v.extend_from_slice(&self.bias);
        v
    }

    pub fn set_from_slice(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.len(), "parameter vector length");
        let (k, rest) = v.split_at(self.kernels.len());
        let (g, b) = rest.split_at(self.channels);
        self.kernels.copy_from_slice(k);
        self.gain.copy_from_slice(g);
        self.bias.copy_from_slice(b);
    }

    fn kernel(&self, c: usize) -> &[f64] {
        let k2 = self.kernel_size * self.kernel_size;
        &self.kernels[c * k2..(c + 1) * k2]
    }
}

/// Reflect index `i` into `[0, n)` without repeating the edge sample.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

fn round_up(v: usize, f: usize) -> usize {
    v.div_ceil(f) * f
}

/// Decoder activations kept for the backward pass.
struct Forward {
    /// Bilinearly upsampled latent at padded size.
    up: ImageBuffer,
    /// Convolution output, before gain/bias, cropped to the pixel size.
    conv: ImageBuffer,
    /// Final decoded image.
    out: ImageBuffer,
}

impl ToyCodec {
    pub fn new(factor: usize, kernel_size: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("codec factor must be >= 1"));
        }
        if kernel_size == 0 || kernel_size.is_multiple_of(2) {
            return Err(Error::invalid(format!("kernel size {kernel_size} must be odd")));
        }
        Ok(Self { factor, kernel_size })
    }

    /// Codec whose encode and decode are both the identity.
    pub fn identity() -> Self {
        Self {
            factor: 1,
            kernel_size: 1,
        }
    }

    pub fn initial_params(&self, channels: usize) -> DecoderParams {
        DecoderParams::identity(channels, self.kernel_size)
    }

    /// Average-pool by `factor`, reflect-padding to a multiple first.
    pub fn encode(&self, x: &ImageBuffer) -> Latent {
        let f = self.factor;
        let (w, h) = (x.width(), x.height());
        let (pw, ph) = (round_up(w, f), round_up(h, f));
        let (zw, zh) = (pw / f, ph / f);
        let norm = 1.0 / (f * f) as f64;
        let z = ImageBuffer::from_fn(zw, zh, x.channels(), |c, zy, zx| {
            let mut acc = 0.0;
            for dy in 0..f {
                for dx in 0..f {
                    acc += x.get(c, reflect(zy * f + dy, h), reflect(zx * f + dx, w));
                }
            }
            acc * norm
        });
        Latent { z, width: w, height: h }
    }

    fn check_params(&self, params: &DecoderParams, latent: &Latent) -> Result<()> {
        if params.kernel_size != self.kernel_size || params.channels != latent.z.channels() {
            return Err(Error::invalid(format!(
                "decoder params are {}ch k={}, latent has {} channels and codec k={}",
                params.channels,
                params.kernel_size,
                latent.z.channels(),
                self.kernel_size
            )));
        }
        let (pw, ph) = (latent.z.width() * self.factor, latent.z.height() * self.factor);
        if latent.width > pw || latent.height > ph {
            return Err(Error::invalid("latent is too small for its pixel size"));
        }
        Ok(())
    }

    fn forward(&self, params: &DecoderParams, latent: &Latent) -> Result<Forward> {
        self.check_params(params, latent)?;
        let f = self.factor;
        let up = resize_bilinear(&latent.z, latent.z.width() * f, latent.z.height() * f)?;
        let (uw, uh) = (up.width() as i64, up.height() as i64);
        let k = self.kernel_size;
        let r = (k / 2) as i64;
        let (w, h) = (latent.width, latent.height);
        let channels = latent.z.channels();
        let mut conv = ImageBuffer::zeros(w, h, channels);
        let mut out = ImageBuffer::zeros(w, h, channels);
        for c in 0..channels {
            let kern = params.kernel(c);
            let plane = up.plane(c);
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for p in 0..k {
                        let sy = (y as i64 + p as i64 - r).clamp(0, uh - 1) as usize;
                        let row = &plane[sy * uw as usize..];
                        for q in 0..k {
                            let sx = (x as i64 + q as i64 - r).clamp(0, uw - 1) as usize;
                            acc += kern[p * k + q] * row[sx];
                        }
                    }
                    conv.set(c, y, x, acc);
                    out.set(c, y, x, params.gain[c] * acc + params.bias[c]);
                }
            }
        }
        Ok(Forward { up, conv, out })
    }

    pub fn decode(&self, params: &DecoderParams, latent: &Latent) -> Result<ImageBuffer> {
        Ok(self.forward(params, latent)?.out)
    }

    /// Decode with the initial (unoptimized) parameters.
    pub fn decode_initial(&self, latent: &Latent) -> Result<ImageBuffer> {
        self.decode(&self.initial_params(latent.z.channels()), latent)
    }
}

/// The two terms of the decoder-optimization loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    /// `‖m ⊙ (x_out - D(z))‖²`
    pub masked: f64,
    /// `‖(1 - m) ⊙ (x_in - D(z))‖²`
    pub unmasked: f64,
    pub lambda: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.masked + self.lambda * self.unmasked
    }

    fn add(self, other: LossTerms) -> LossTerms {
        LossTerms {
            masked: self.masked + other.masked,
            unmasked: self.unmasked + other.unmasked,
            lambda: self.lambda,
        }
    }
}

/// Targets of one loss evaluation: `x_out_ref` inside the mask, `x_in`
/// outside it.
#[derive(Debug, Clone, Copy)]
pub struct LossTargets<'a> {
    pub x_in: &'a ImageBuffer,
    pub x_out_ref: &'a ImageBuffer,
    pub mask: &'a MaskBuffer,
    pub lambda: f64,
}

impl LossTargets<'_> {
    fn check(&self, decoded: &ImageBuffer) -> Result<()> {
        decoded.ensure_same_shape(self.x_in)?;
        decoded.ensure_same_shape(self.x_out_ref)?;
        self.mask.ensure_matches(decoded)
    }

    fn terms(&self, decoded: &ImageBuffer) -> LossTerms {
        let m = self.mask.values();
        let (mut masked, mut unmasked) = (0.0, 0.0);
        for c in 0..decoded.channels() {
            let (d, a, b) = (decoded.plane(c), self.x_out_ref.plane(c), self.x_in.plane(c));
            for i in 0..d.len() {
                masked += (m[i] * (a[i] - d[i])).powi(2);
                unmasked += ((1.0 - m[i]) * (b[i] - d[i])).powi(2);
            }
        }
        LossTerms {
            masked,
            unmasked,
            lambda: self.lambda,
        }
    }
}

/// Decoder-optimization loss for the current `params`.
pub fn l_do(codec: &ToyCodec, params: &DecoderParams, z_out: &Latent, targets: LossTargets<'_>) -> Result<LossTerms> {
    let decoded = codec.decode(params, z_out)?;
    targets.check(&decoded)?;
    Ok(targets.terms(&decoded))
}

/// Loss and its analytic gradient in the flattened parameter order of
/// [`DecoderParams::to_vec`].
pub fn l_do_with_grad(
    codec: &ToyCodec,
    params: &DecoderParams,
    z_out: &Latent,
    targets: LossTargets<'_>,
) -> Result<(LossTerms, Vec<f64>)> {
    let fwd = codec.forward(params, z_out)?;
    targets.check(&fwd.out)?;
    let terms = targets.terms(&fwd.out);

    let k = codec.kernel_size;
    let k2 = k * k;
    let r = (k / 2) as i64;
    let channels = params.channels;
    let (w, h) = (fwd.out.width(), fwd.out.height());
    let (uw, uh) = (fwd.up.width() as i64, fwd.up.height() as i64);
    let m = targets.mask.values();
    let lambda = targets.lambda;

    let mut grad = vec![0.0; params.len()];
    let (gk, rest) = grad.split_at_mut(channels * k2);
    let (gg, gb) = rest.split_at_mut(channels);
    for c in 0..channels {
        let (d, a, b) = (fwd.out.plane(c), targets.x_out_ref.plane(c), targets.x_in.plane(c));
        let conv = fwd.conv.plane(c);
        let up = fwd.up.plane(c);
        let gain = params.gain[c];
        let gk = &mut gk[c * k2..(c + 1) * k2];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (mi, ui) = (m[i] * m[i], (1.0 - m[i]) * (1.0 - m[i]));
                let dl_dd = -2.0 * (mi * (a[i] - d[i]) + lambda * ui * (b[i] - d[i]));
                if dl_dd == 0.0 {
                    continue;
                }
                gb[c] += dl_dd;
                gg[c] += dl_dd * conv[i];
                let scale = dl_dd * gain;
                for p in 0..k {
                    let sy = (y as i64 + p as i64 - r).clamp(0, uh - 1) as usize;
                    for q in 0..k {
                        let sx = (x as i64 + q as i64 - r).clamp(0, uw - 1) as usize;
                        gk[p * k + q] += scale * up[sy * uw as usize + sx];
                    }
                }
            }
        }
    }
    Ok((terms, grad))
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderOptConfig {
    pub lambda: f64,
    pub steps: usize,
    pub lr: f64,
}

impl Default for DecoderOptConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            steps: 100,
            lr: 1e-4,
        }
    }
}

impl DecoderOptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DecoderOptOutcome {
    pub params: DecoderParams,
    pub initial: LossTerms,
    pub final_loss: LossTerms,
    /// Total loss before each update.
    pub history: Vec<f64>,
}

/// One segment of a (possibly tiled) decoder-optimization problem.
struct Segment<'a> {
    latent: &'a Latent,
    x_in: ImageBuffer,
    x_out_ref: ImageBuffer,
    mask: MaskBuffer,
}

fn optimize_segments(
    codec: &ToyCodec,
    segments: &[Segment<'_>],
    channels: usize,
    cfg: &DecoderOptConfig,
) -> Result<DecoderOptOutcome> {
    cfg.validate()?;
    let eval = |params: &DecoderParams, with_grad: bool| -> Result<(LossTerms, Vec<f64>)> {
        let parts = segments
            .par_iter()
            .map(|s| {
                let targets = LossTargets {
                    x_in: &s.x_in,
                    x_out_ref: &s.x_out_ref,
                    mask: &s.mask,
                    lambda: cfg.lambda,
                };
                if with_grad {
                    l_do_with_grad(codec, params, s.latent, targets)
                } else {
                    l_do(codec, params, s.latent, targets).map(|t| (t, Vec::new()))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let zero = LossTerms {
            masked: 0.0,
            unmasked: 0.0,
            lambda: cfg.lambda,
        };
        let mut total = zero;
        let mut grad = vec![0.0; if with_grad { params.len() } else { 0 }];
        for (terms, g) in parts {
            total = total.add(terms);
            for (acc, v) in grad.iter_mut().zip(g) {
                *acc += v;
            }
        }
        Ok((total, grad))
    };

    let mut params = codec.initial_params(channels);
    let mut flat = params.to_vec();
    let mut adam = Adam::new(flat.len(), cfg.lr);
    let mut history = Vec::with_capacity(cfg.steps);
    let mut initial = None;
    for step in 0..cfg.steps {
        let (terms, grad) = eval(&params, true)?;
        let loss = terms.total();
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step, loss });
        }
        initial.get_or_insert(terms);
        history.push(loss);
        adam.step(&mut flat, &grad);
        params.set_from_slice(&flat);
    }
    let (final_loss, _) = eval(&params, false)?;
    if !final_loss.total().is_finite() {
        return Err(Error::NonFiniteLoss {
            step: cfg.steps,
            loss: final_loss.total(),
        });
    }
    Ok(DecoderOptOutcome {
        params,
        initial: initial.unwrap_or(final_loss),
        final_loss,
        history,
    })
}

/// Optimize the decoder so `D(z_out)` keeps the edit inside `mask` and
/// matches `x_in` outside it. The masked target is `z_out` decoded with the
/// initial parameters.
pub fn decoder_optimize(
    codec: &ToyCodec,
    z_out: &Latent,
    x_in: &ImageBuffer,
    mask: &MaskBuffer,
    cfg: &DecoderOptConfig,
) -> Result<DecoderOptOutcome> {
    let x_out_ref = codec.decode_initial(z_out)?;
    x_out_ref.ensure_same_shape(x_in)?;
    let seg = Segment {
        latent: z_out,
        x_in: x_in.clone(),
        x_out_ref,
        mask: mask.clone(),
    };
    optimize_segments(codec, std::slice::from_ref(&seg), z_out.z.channels(), cfg)
}

/// One shared parameter set optimized on the sum of per-tile losses.
/// `z_tiles` are the latents of the grid's tiles, in grid order.
pub fn segmented_decoder_optimize(
    codec: &ToyCodec,
    z_tiles: &[Latent],
    x_in: &ImageBuffer,
    mask: &MaskBuffer,
    grid: &TileGrid,
    cfg: &DecoderOptConfig,
) -> Result<DecoderOptOutcome> {
    let rects = grid.rects();
    if z_tiles.len() != rects.len() {
        return Err(Error::invalid(format!(
            "{} latent tiles for a {}-tile grid",
            z_tiles.len(),
            rects.len()
        )));
    }
    mask.ensure_matches(x_in)?;
    let segments = z_tiles
        .iter()
        .zip(&rects)
        .map(|(z, r)| {
            Ok(Segment {
                latent: z,
                x_in: x_in.crop(*r)?,
                x_out_ref: codec.decode_initial(z)?,
                mask: mask.crop(*r)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    optimize_segments(codec, &segments, x_in.channels(), cfg)
}

/// Decode every tile with `params` and alpha-composite the results.
pub fn decode_segments(
    codec: &ToyCodec,
    params: &DecoderParams,
    z_tiles: &[Latent],
    grid: &TileGrid,
) -> Result<ImageBuffer> {
    let tiles = z_tiles
        .par_iter()
        .map(|z| codec.decode(params, z))
        .collect::<Result<Vec<_>>>()?;
    alpha_composite(&tiles, grid, &feather_weights(grid))
}
