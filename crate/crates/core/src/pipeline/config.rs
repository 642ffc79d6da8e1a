use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codec::{DecoderOptConfig, ToyCodec};
use crate::error::{Error, Result};
use crate::schedule::{NoiseSchedule, TimestepPlan};

/// One refinement stage after the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    /// Long edge of the stage output in pixels; `None` means the crop's
    /// native resolution.
    pub long_edge: Option<usize>,
    /// Fraction of the sampler plan run from the SDEdit start point.
    pub t_prime_fraction: f64,
    pub segmented: bool,
    pub tile_size: usize,
    pub overlap: usize,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            long_edge: None,
            t_prime_fraction: 0.25,
            segmented: false,
            tile_size: 768,
            overlap: 128,
        }
    }
}

impl StageConfig {
    pub fn intermediate(long_edge: usize, t_prime_fraction: f64) -> Self {
        Self {
            long_edge: Some(long_edge),
            t_prime_fraction,
            ..Self::default()
        }
    }

    pub fn segmented_native(t_prime_fraction: f64, tile_size: usize, overlap: usize) -> Self {
        Self {
            long_edge: None,
            t_prime_fraction,
            segmented: true,
            tile_size,
            overlap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub t_train: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            t_train: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

/// Upscaling variants compared in the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Ablation {
    /// (a) bilinear upscaling of the first-stage result.
    #[serde(rename = "a")]
    Bilinear,
    /// (b) super-resolution only.
    #[serde(rename = "b")]
    SrOnly,
    /// (c) super-resolution, then unconditional diffusion over the whole crop.
    #[serde(rename = "c")]
    SrUnconditional,
    /// (d) super-resolution, then text-conditional diffusion over the whole crop.
    #[serde(rename = "d")]
    SrConditional,
    /// (e) blended diffusion over an unfiltered background.
    #[serde(rename = "e")]
    SrBlendedUnfiltered,
    /// (f) blended diffusion over a low-pass filtered background.
    #[default]
    #[serde(rename = "f")]
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Bilinear,
        Ablation::SrOnly,
        Ablation::SrUnconditional,
        Ablation::SrConditional,
        Ablation::SrBlendedUnfiltered,
        Ablation::Full,
    ];

    pub fn letter(self) -> char {
        match self {
            Ablation::Bilinear => 'a',
            Ablation::SrOnly => 'b',
            Ablation::SrUnconditional => 'c',
            Ablation::SrConditional => 'd',
            Ablation::SrBlendedUnfiltered => 'e',
            Ablation::Full => 'f',
        }
    }

    /// Whether later stages run diffusion at all.
    pub fn refines(self) -> bool {
        !matches!(self, Ablation::Bilinear | Ablation::SrOnly)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| s.len() == 1 && s.starts_with(a.letter()))
            .ok_or_else(|| Error::Config(format!("unknown ablation variant '{s}', expected a-f")))
    }
}

/// What the reranking scorer sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreView {
    /// The whole decoded first-stage crop.
    #[default]
    Crop,
    /// Only the bounding box of the mask inside the crop.
    MaskBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// First-stage batch size.
    pub batch_b: usize,
    /// Repaint iterations per first-stage step.
    pub repaint_r: usize,
    /// Context margin around the mask, in pixels.
    pub margin: usize,
    pub sampler_steps: usize,
    pub seed: u64,
    pub eta: f64,
    pub guidance: f64,
    pub schedule: ScheduleConfig,
    pub stages: Vec<StageConfig>,
    pub decoder_opt: DecoderOptConfig,
    pub codec: ToyCodec,
    /// Run diffusion on pixels and skip decoder optimization.
    pub pixel_space_mode: bool,
    pub dump_intermediates: bool,
    /// Upper bound on tiles in any segmented stage.
    pub max_tiles: usize,
    pub ablation: Ablation,
    pub score_view: ScoreView,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            batch_b: 5,
            repaint_r: 5,
            margin: 64,
            sampler_steps: 50,
            seed: 0,
            eta: 0.0,
            guidance: 7.5,
            schedule: ScheduleConfig::default(),
            stages: vec![
                StageConfig::intermediate(768, 0.4),
                StageConfig::segmented_native(0.25, 768, 128),
            ],
            decoder_opt: DecoderOptConfig::default(),
            codec: ToyCodec::default(),
            pixel_space_mode: false,
            dump_intermediates: false,
            max_tiles: 256,
            ablation: Ablation::Full,
            score_view: ScoreView::Crop,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_b == 0 {
            return bad("batch_b must be >= 1".into());
        }
        if self.sampler_steps == 0 || self.sampler_steps > self.schedule.t_train {
            return bad(format!(
                "sampler_steps must be in 1..={}, got {}",
                self.schedule.t_train, self.sampler_steps
            ));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad(format!("eta must be in [0, 1], got {}", self.eta));
        }
        if self.guidance.is_nan() || self.guidance < 0.0 {
            return bad(format!("guidance must be >= 0, got {}", self.guidance));
        }
        self.noise_schedule()?;
        self.decoder_opt.validate()?;
        ToyCodec::new(self.codec.factor, self.codec.kernel_size).map_err(|e| Error::Config(e.to_string()))?;
        if self.max_tiles == 0 {
            return bad("max_tiles must be >= 1".into());
        }
        let mut prev: Option<usize> = Some(0);
        for (i, s) in self.stages.iter().enumerate() {
            if !(s.t_prime_fraction > 0.0 && s.t_prime_fraction <= 1.0) {
                return bad(format!("stage {}: t_prime_fraction must be in (0, 1]", i + 2));
            }
            if s.segmented && s.tile_size <= s.overlap {
                return bad(format!("stage {}: tile_size must exceed overlap", i + 2));
            }
            match (prev, s.long_edge) {
                (None, _) => return bad(format!("stage {}: follows a native-resolution stage", i + 2)),
                (Some(p), Some(l)) if l <= p => {
                    return bad(format!("stage {}: long_edge {l} does not grow past {p}", i + 2));
                }
                _ => {}
            }
            prev = s.long_edge;
        }
        Ok(())
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        let s = &self.schedule;
        NoiseSchedule::linear(s.t_train, s.beta_start, s.beta_end).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn plan(&self) -> Result<TimestepPlan> {
        TimestepPlan::uniform(self.schedule.t_train, self.sampler_steps).map_err(|e| Error::Config(e.to_string()))
    }

    /// Preset for one of the upscaling ablation variants.
    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let cfg = PipelineConfig::default();
        assert_eq!((cfg.batch_b, cfg.repaint_r, cfg.sampler_steps), (5, 5, 50));
        assert_eq!(cfg.stages[0].long_edge, Some(768));
        assert_eq!(cfg.stages[0].t_prime_fraction, 0.4);
        assert!(cfg.stages[1].segmented);
        assert_eq!((cfg.stages[1].tile_size, cfg.stages[1].overlap), (768, 128));
        assert_eq!(cfg.stages[1].t_prime_fraction, 0.25);
        assert_eq!(
            cfg.decoder_opt,
            DecoderOptConfig {
                lambda: 1.0,
                steps: 100,
                lr: 1e-4
            }
        );
        cfg.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
        let partial = PipelineConfig::from_toml_str("seed = 9\n[decoder_opt]\nsteps = 3\n").unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.decoder_opt.steps, 3);
        assert_eq!(partial.decoder_opt.lr, 1e-4);
        assert_eq!(partial.stages, cfg.stages);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        for text in [
            "batch = 3",
            "[decoder_opt]\nrate = 1.0",
            "batch_b = 0",
            "sampler_steps = 2000",
            "[[stages]]\nlong_edge = 512\n[[stages]]\nlong_edge = 256",
            "[[stages]]\nt_prime_fraction = 0.0",
            "[[stages]]\nsegmented = true\ntile_size = 64\noverlap = 64",
            "ablation = \"z\"",
        ] {
            assert!(
                matches!(PipelineConfig::from_toml_str(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn ablation_letters() {
        for a in Ablation::ALL {
            assert_eq!(a.to_string().parse::<Ablation>().unwrap(), a);
        }
        assert!("g".parse::<Ablation>().is_err());
        assert!("ab".parse::<Ablation>().is_err());
    }
}
