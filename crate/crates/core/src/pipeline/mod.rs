//! End-to-end multi-stage editing.
//!
//! 1. Crop a square region around the mask (plus margin).
//! 2. First stage: downsample the crop to the denoiser's native resolution,
//!    draw `B` blended-diffusion samples with Repaint, keep the best-scoring
//!    one and run decoder optimization.
//! 3. Each later stage upscales the previous output, pastes it over a
//!    low-pass filtered copy of the input under the mask, and re-denoises
//!    from part-way down the sampler plan. Large stages run tile by tile.
//! 4. Composite the result back into the full image under the mask.

mod config;
mod stages;

pub use config::{Ablation, PipelineConfig, ScheduleConfig, ScoreView, StageConfig};
pub use stages::{FirstStageOutput, StageOutput};

use crate::buffer::{ImageBuffer, MaskBuffer, Rect};
use crate::codec::ToyCodec;
use crate::denoiser::{Conditioning, CountingDenoiser, DenoiserBackend};
use crate::error::{Error, Result};
use crate::image_ops::{blend_masked, crop_square_around_mask, resize_bilinear, size_for_long_edge};
use crate::rerank::ScorerBackend;
use crate::schedule::{NoiseSchedule, TimestepPlan};
use crate::upscaler::{upscale, UpscalerBackend};

/// A named snapshot of the pipeline state, in pixel space.
#[derive(Debug, Clone)]
pub struct Intermediate {
    pub name: String,
    pub image: ImageBuffer,
}

/// Collector for [`Intermediate`] snapshots; a disabled trace records
/// nothing.
#[derive(Debug, Default)]
pub struct Trace {
    enabled: bool,
    items: Vec<Intermediate>,
}

impl Trace {
    pub fn new(enabled: bool) -> Self {
        Self {
            enabled,
            items: Vec::new(),
        }
    }

    pub fn items(&self) -> &[Intermediate] {
        &self.items
    }

    pub fn into_items(self) -> Vec<Intermediate> {
        self.items
    }

    fn push(&mut self, name: impl Into<String>, image: impl FnOnce() -> ImageBuffer) {
        if self.enabled {
            self.items.push(Intermediate {
                name: name.into(),
                image: image(),
            });
        }
    }
}

/// Refinement stages that run: 1-based config index, config, output size.
pub type LaterStages = Vec<(usize, StageConfig, (usize, usize))>;

/// Per-stage bookkeeping. The first stage counts its batch samples as
/// tiles.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub tiles: usize,
    /// Tiles whose mask had support and were denoised.
    pub tiles_denoised: usize,
    pub steps_per_tile: usize,
    /// Decoder-optimization loss before and after, if it ran.
    pub decoder_loss: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct EditOutput {
    /// Edited image, same size as the input.
    pub image: ImageBuffer,
    /// Crop rectangle in input coordinates.
    pub crop: Rect,
    /// Index of the first-stage candidate chosen by the scorer.
    pub selected: usize,
    pub scores: Vec<f64>,
    pub stages: Vec<StageReport>,
    /// Denoiser calls made by this run.
    pub denoiser_calls: usize,
    /// Snapshots, filled when `dump_intermediates` is set.
    pub intermediates: Vec<Intermediate>,
}

/// Pipeline bound to its backends.
pub struct Pipeline<'a> {
    cfg: PipelineConfig,
    schedule: NoiseSchedule,
    plan: TimestepPlan,
    denoiser: CountingDenoiser<&'a dyn DenoiserBackend>,
    upscaler: &'a dyn UpscalerBackend,
    scorer: Option<&'a dyn ScorerBackend>,
    tile_order: Option<Vec<usize>>,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        cfg: PipelineConfig,
        denoiser: &'a dyn DenoiserBackend,
        upscaler: &'a dyn UpscalerBackend,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            schedule: cfg.noise_schedule()?,
            plan: cfg.plan()?,
            cfg,
            denoiser: CountingDenoiser::new(denoiser),
            upscaler,
            scorer: None,
            tile_order: None,
        })
    }

    /// Rerank with `scorer`. Without one, candidates are scored by
    /// negative L2 distance to the first-stage input.
    pub fn with_scorer(mut self, scorer: &'a dyn ScorerBackend) -> Self {
        self.scorer = Some(scorer);
        self
    }

    /// Process the tiles of segmented stages in this order. Must be a
    /// permutation of the grid indices; the output does not depend on it.
    pub fn with_tile_order(mut self, order: Vec<usize>) -> Self {
        self.tile_order = Some(order);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn plan(&self) -> &TimestepPlan {
        &self.plan
    }

    /// Codec the diffusion runs in: the identity in pixel-space mode.
    pub fn codec(&self) -> ToyCodec {
        if self.cfg.pixel_space_mode {
            ToyCodec::identity()
        } else {
            self.cfg.codec
        }
    }

    pub fn conditioning(&self, prompt: &str) -> Result<Conditioning> {
        Conditioning::new(prompt, self.cfg.guidance)
    }

    /// Pixel size of the first stage, then the later stages that run with
    /// their 1-based config index and output size, for a crop of
    /// `crop_w`×`crop_h`.
    ///
    /// Fixed-size stages at or above the crop size are dropped, as is any
    /// stage that would not grow past the previous one.
    pub fn stage_layout(&self, crop_w: usize, crop_h: usize) -> Result<((usize, usize), LaterStages)> {
        let native = self.denoiser.native_resolution();
        if native == 0 {
            return Err(Error::Backend(format!(
                "denoiser {} reports native resolution 0",
                self.denoiser.name()
            )));
        }
        let crop_long = crop_w.max(crop_h);
        let mut long = native.min(crop_long);
        let size_at = |l: usize| {
            if l == crop_long {
                (crop_w, crop_h)
            } else {
                size_for_long_edge(crop_w, crop_h, l)
            }
        };
        let first = size_at(long);
        let mut later = Vec::new();
        for (i, s) in self.cfg.stages.iter().enumerate() {
            let target = match s.long_edge {
                Some(l) if l >= crop_long => continue,
                Some(l) => l,
                None => crop_long,
            };
            if target > long {
                long = target;
                later.push((i + 1, s.clone(), size_at(target)));
            }
        }
        Ok((first, later))
    }

    /// Edit `x_in` inside `mask` according to `prompt`.
    ///
    /// The reported call count assumes runs on one `Pipeline` do not overlap.
    pub fn run(&self, x_in: &ImageBuffer, mask: &MaskBuffer, prompt: &str) -> Result<EditOutput> {
        mask.ensure_matches(x_in)?;
        if !x_in.all_finite() {
            return Err(Error::invalid("input image has non-finite values"));
        }
        let calls_before = self.denoiser.calls();
        let mut trace = Trace::new(self.cfg.dump_intermediates);
        let cond = self.conditioning(prompt)?;
        let (rect, crop, crop_mask) = crop_square_around_mask(x_in, mask, self.cfg.margin)?;
        trace.push("crop", || crop.clone());
        trace.push("crop_mask", || crop_mask.as_image().clone());
        let (cw, ch) = (crop.width(), crop.height());

        let first = self.run_first_stage(&crop, &crop_mask, &cond, &mut trace)?;
        let mut reports = vec![first.report.clone()];
        let mut x = first.image;

        match self.cfg.ablation {
            Ablation::Bilinear => {
                x = resize_bilinear(&x, cw, ch)?;
                trace.push("bilinear_upscale", || x.clone());
            }
            Ablation::SrOnly => {
                x = upscale(self.upscaler, &x, cw, ch).map_err(|e| e.in_stage("upscale", None))?;
                trace.push("sr_upscale", || x.clone());
            }
            _ => {
                for (idx, stage, size) in self.stage_layout(cw, ch)?.1 {
                    let out = self.run_stage(idx, &stage, size, &x, &crop, &crop_mask, &cond, &mut trace)?;
                    reports.push(out.report);
                    x = out.image;
                }
                if (x.width(), x.height()) != (cw, ch) {
                    x = upscale(self.upscaler, &x, cw, ch).map_err(|e| e.in_stage("upscale", None))?;
                }
            }
        }

        let edited = blend_masked(&x, &crop, &crop_mask)?;
        let mut image = x_in.clone();
        image.paste(&edited, rect)?;
        trace.push("final_composite", || image.clone());
        Ok(EditOutput {
            image,
            crop: rect,
            selected: first.selected,
            scores: first.scores,
            stages: reports,
            denoiser_calls: self.denoiser.calls() - calls_before,
            intermediates: trace.into_items(),
        })
    }
}

/// Run the whole pipeline with default reranking.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    denoiser: &dyn DenoiserBackend,
    upscaler: &dyn UpscalerBackend,
    x_in: &ImageBuffer,
    mask: &MaskBuffer,
    prompt: &str,
) -> Result<EditOutput> {
    Pipeline::new(cfg.clone(), denoiser, upscaler)?.run(x_in, mask, prompt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::StubDenoiser;
    use crate::upscaler::BicubicUpscaler;

    fn layout(cfg: PipelineConfig, native: usize, w: usize, h: usize) -> ((usize, usize), Vec<(usize, usize)>) {
        let den = StubDenoiser {
            native_resolution: native,
        };
        let up = BicubicUpscaler::default();
        let p = Pipeline::new(cfg, &den, &up).unwrap();
        let (first, later) = p.stage_layout(w, h).unwrap();
        (first, later.into_iter().map(|(_, _, s)| s).collect())
    }

    #[test]
    fn default_layout_for_large_crop() {
        let (first, later) = layout(PipelineConfig::default(), 512, 2000, 1500);
        assert_eq!(first, (512, 384));
        assert_eq!(later, vec![(768, 576), (2000, 1500)]);
    }

    #[test]
    fn stages_that_do_not_grow_are_dropped() {
        // Crop below the intermediate size: straight from native to full.
        let (first, later) = layout(PipelineConfig::default(), 512, 700, 700);
        assert_eq!(first, (512, 512));
        assert_eq!(later, vec![(700, 700)]);
        // Crop no larger than native: the first stage is final.
        let (first, later) = layout(PipelineConfig::default(), 512, 300, 200);
        assert_eq!(first, (300, 200));
        assert!(later.is_empty());
    }

    #[test]
    fn empty_mask_is_rejected() {
        let den = StubDenoiser { native_resolution: 8 };
        let up = BicubicUpscaler::default();
        let img = ImageBuffer::zeros(16, 16, 1);
        let err = run_pipeline(
            &PipelineConfig::default(),
            &den,
            &up,
            &img,
            &MaskBuffer::filled(16, 16, 0.0),
            "",
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptyMask));
    }
}
