use rayon::prelude::*;

use super::{Ablation, Pipeline, ScoreView, StageConfig, StageReport, Trace};
use crate::blend::{blended_loop, BlendInputs};
use crate::buffer::{ImageBuffer, MaskBuffer};
use crate::codec::{decode_segments, decoder_optimize, segmented_decoder_optimize, Latent};
use crate::denoiser::Conditioning;
use crate::error::{Error, Result};
use crate::image_ops::{
    alpha_composite, blend_masked, feather_weights, low_pass_to, resize_bilinear, resize_mask, TileGrid,
};
use crate::noise::NoiseStream;
use crate::rerank::{argmax, score_all, L2Scorer, ScorerBackend};
use crate::upscaler::upscale;

#[derive(Debug, Clone)]
pub struct FirstStageOutput {
    /// Chosen candidate after decoder optimization, in pixels.
    pub image: ImageBuffer,
    /// Every candidate decoded with the initial decoder.
    pub candidates: Vec<ImageBuffer>,
    pub scores: Vec<f64>,
    pub selected: usize,
    pub report: StageReport,
}

#[derive(Debug, Clone)]
pub struct StageOutput {
    pub image: ImageBuffer,
    /// Stage input: upscaled previous output over the filtered background.
    pub x_tilde: ImageBuffer,
    pub report: StageReport,
}

impl Pipeline<'_> {
    fn latent(&self, image: &ImageBuffer) -> Latent {
        self.codec().encode(image)
    }

    fn run_blended(
        &self,
        z: &Latent,
        mask: &MaskBuffer,
        cond: &Conditioning,
        stream: NoiseStream,
        start: usize,
        repaint_r: usize,
    ) -> Result<Latent> {
        let mask_z = resize_mask(mask, z.z.width(), z.z.height())?;
        let inputs =
            BlendInputs::new(z.z.clone(), mask_z, cond.clone(), self.plan.clone(), stream)?.with_eta(self.cfg.eta);
        let out = blended_loop(&self.schedule, &self.denoiser, &inputs, start, repaint_r, None)?;
        Ok(Latent {
            z: out,
            width: z.width,
            height: z.height,
        })
    }

    /// Decode with decoder optimization toward `x_in` off the mask, or
    /// return the latent as-is in pixel-space mode.
    fn finish_single(
        &self,
        z: &Latent,
        x_in: &ImageBuffer,
        mask: &MaskBuffer,
    ) -> Result<(ImageBuffer, Option<(f64, f64)>)> {
        if self.cfg.pixel_space_mode {
            return Ok((z.z.clone(), None));
        }
        let codec = self.codec();
        let opt = decoder_optimize(&codec, z, x_in, mask, &self.cfg.decoder_opt)?;
        let image = codec.decode(&opt.params, z)?;
        Ok((image, Some((opt.initial.total(), opt.final_loss.total()))))
    }

    /// Blended diffusion with Repaint at the denoiser's native resolution,
    /// reranking and decoder optimization.
    pub fn run_first_stage(
        &self,
        crop: &ImageBuffer,
        crop_mask: &MaskBuffer,
        cond: &Conditioning,
        trace: &mut Trace,
    ) -> Result<FirstStageOutput> {
        let name = "stage1";
        let ctx = |e: Error| e.in_stage(name, None);
        let ((w, h), _) = self.stage_layout(crop.width(), crop.height())?;
        let x_tilde = resize_bilinear(crop, w, h)?;
        let mask = resize_mask(crop_mask, w, h)?;
        trace.push("stage1_input", || x_tilde.clone());

        let z_tilde = self.latent(&x_tilde);
        let samples = (0..self.cfg.batch_b)
            .into_par_iter()
            .map(|b| {
                let stream = NoiseStream::new(self.cfg.seed, 0, b as u32);
                self.run_blended(&z_tilde, &mask, cond, stream, 0, self.cfg.repaint_r)
                    .map_err(|e| e.in_stage(format!("{name} sample {b}"), None))
            })
            .collect::<Result<Vec<_>>>()?;
        let codec = self.codec();
        let candidates = samples
            .iter()
            .map(|z| codec.decode_initial(z))
            .collect::<Result<Vec<_>>>()
            .map_err(ctx)?;
        for (b, c) in candidates.iter().enumerate() {
            trace.push(format!("stage1_candidate_{b}"), || c.clone());
        }

        let view = |img: &ImageBuffer| -> Result<ImageBuffer> {
            match (self.cfg.score_view, mask.support_bbox()) {
                (ScoreView::MaskBox, Some(r)) => img.crop(r),
                _ => Ok(img.clone()),
            }
        };
        let views = candidates.iter().map(view).collect::<Result<Vec<_>>>()?;
        let fallback;
        let scorer: &dyn ScorerBackend = match self.scorer {
            Some(s) => s,
            None => {
                fallback = L2Scorer::new(view(&x_tilde)?);
                &fallback
            }
        };
        let scores = score_all(scorer, &views, &cond.prompt).map_err(|e| e.in_stage("rerank", None))?;
        let selected = argmax(&scores).map_err(|e| e.in_stage("rerank", None))?;
        trace.push("stage1_selected", || candidates[selected].clone());

        let (image, decoder_loss) = self.finish_single(&samples[selected], &x_tilde, &mask).map_err(ctx)?;
        trace.push("stage1_decoder_opt", || image.clone());
        Ok(FirstStageOutput {
            image,
            candidates,
            scores,
            selected,
            report: StageReport {
                name: name.into(),
                width: w,
                height: h,
                tiles: self.cfg.batch_b,
                tiles_denoised: self.cfg.batch_b,
                steps_per_tile: self.plan.len() * (1 + self.cfg.repaint_r),
                decoder_loss,
            },
        })
    }

    /// Stage input x̃ and the mask and conditioning diffusion runs with.
    fn stage_input(
        &self,
        sr: &ImageBuffer,
        prev_size: (usize, usize),
        crop: &ImageBuffer,
        mask: &MaskBuffer,
        cond: &Conditioning,
    ) -> Result<(ImageBuffer, MaskBuffer, Conditioning)> {
        let (w, h) = (sr.width(), sr.height());
        let everywhere = MaskBuffer::filled(w, h, 1.0);
        Ok(match self.cfg.ablation {
            Ablation::SrUnconditional => (sr.clone(), everywhere, Conditioning::unconditional()),
            Ablation::SrConditional => (sr.clone(), everywhere, cond.clone()),
            Ablation::SrBlendedUnfiltered => {
                let bg = resize_bilinear(crop, w, h)?;
                (blend_masked(sr, &bg, mask)?, mask.clone(), cond.clone())
            }
            Ablation::Full | Ablation::Bilinear | Ablation::SrOnly => {
                let bg = low_pass_to(crop, prev_size.0, prev_size.1, w, h)?;
                (blend_masked(sr, &bg, mask)?, mask.clone(), cond.clone())
            }
        })
    }

    fn execution_order(&self, stage: &StageConfig, n: usize) -> Result<Vec<usize>> {
        match (&self.tile_order, stage.segmented) {
            (Some(order), true) => {
                let mut seen = vec![false; n];
                for &k in order {
                    if k >= n || std::mem::replace(&mut seen[k], true) {
                        return Err(Error::invalid(format!("tile order is not a permutation of 0..{n}")));
                    }
                }
                if order.len() != n {
                    return Err(Error::invalid(format!("tile order is not a permutation of 0..{n}")));
                }
                Ok(order.clone())
            }
            _ => Ok((0..n).collect()),
        }
    }

    /// One refinement stage: upscale, rebuild x̃, SDEdit-started blended
    /// diffusion (per tile when segmented), decoder optimization.
    ///
    /// `index` is the stage's 1-based position after the first stage; it
    /// keys the noise streams.
    #[allow(clippy::too_many_arguments)]
    pub fn run_stage(
        &self,
        index: usize,
        stage: &StageConfig,
        (w, h): (usize, usize),
        x_prev: &ImageBuffer,
        crop: &ImageBuffer,
        crop_mask: &MaskBuffer,
        cond: &Conditioning,
        trace: &mut Trace,
    ) -> Result<StageOutput> {
        let name = format!("stage{}", index + 1);
        let ctx = |e: Error| e.in_stage(name.clone(), None);
        let mask = resize_mask(crop_mask, w, h)?;
        let sr = upscale(self.upscaler, x_prev, w, h).map_err(ctx)?;
        trace.push(format!("{name}_sr"), || sr.clone());
        let prev_size = (x_prev.width(), x_prev.height());
        let (x_tilde, diff_mask, cond) = self.stage_input(&sr, prev_size, crop, &mask, cond)?;
        trace.push(format!("{name}_x_tilde"), || x_tilde.clone());

        let grid = if stage.segmented {
            TileGrid::new(w, h, stage.tile_size, stage.overlap)?
        } else {
            TileGrid::new(w, h, w.max(h), 0)?
        };
        if grid.len() > self.cfg.max_tiles {
            return Err(Error::Config(format!(
                "{name}: {} tiles exceed the budget of {}",
                grid.len(),
                self.cfg.max_tiles
            )));
        }
        let tail = self.plan.tail_len(stage.t_prime_fraction);
        let start = self.plan.len() - tail;
        let rects = grid.rects();
        let order = self.execution_order(stage, rects.len())?;

        let done = order
            .par_iter()
            .map(|&k| {
                let tile_ctx = |e: Error| e.in_stage(name.clone(), Some(k));
                let x_tile = x_tilde.crop(rects[k]).map_err(tile_ctx)?;
                let m_tile = diff_mask.crop(rects[k]).map_err(tile_ctx)?;
                let z = self.latent(&x_tile);
                if !m_tile.has_support() || tail == 0 {
                    return Ok((k, z, false));
                }
                let stream = NoiseStream::new(self.cfg.seed, index as u32, k as u32);
                let out = self
                    .run_blended(&z, &m_tile, &cond, stream, start, 0)
                    .map_err(tile_ctx)?;
                Ok((k, out, true))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut slots: Vec<Option<Latent>> = vec![None; rects.len()];
        let mut tiles_denoised = 0;
        for (k, z, denoised) in done {
            tiles_denoised += usize::from(denoised);
            slots[k] = Some(z);
        }
        let latents: Vec<Latent> = slots.into_iter().map(|z| z.expect("every tile processed")).collect();

        let codec = self.codec();
        let (image, decoder_loss) = if self.cfg.pixel_space_mode {
            let tiles: Vec<ImageBuffer> = latents.into_iter().map(|l| l.z).collect();
            let image = if tiles.len() == 1 {
                tiles.into_iter().next().expect("one tile")
            } else {
                alpha_composite(&tiles, &grid, &feather_weights(&grid))?
            };
            (image, None)
        } else {
            if self.cfg.dump_intermediates {
                let sampled = decode_segments(&codec, &codec.initial_params(x_tilde.channels()), &latents, &grid)?;
                trace.push(format!("{name}_sampled"), || sampled);
            }
            let x_in = resize_bilinear(crop, w, h)?;
            let opt = segmented_decoder_optimize(&codec, &latents, &x_in, &mask, &grid, &self.cfg.decoder_opt)
                .map_err(ctx)?;
            let image = decode_segments(&codec, &opt.params, &latents, &grid)?;
            (image, Some((opt.initial.total(), opt.final_loss.total())))
        };
        if self.cfg.pixel_space_mode {
            trace.push(format!("{name}_sampled"), || image.clone());
        } else {
            trace.push(format!("{name}_decoder_opt"), || image.clone());
        }
        Ok(StageOutput {
            image,
            x_tilde,
            report: StageReport {
                name,
                width: w,
                height: h,
                tiles: rects.len(),
                tiles_denoised,
                steps_per_tile: tail,
                decoder_loss,
            },
        })
    }
}
