mod common;

use common::{box_mask, oracle, scene, small_config};
use msbd::denoiser::{CountingDenoiser, StubDenoiser};
use msbd::pipeline::{run_pipeline, Ablation, Pipeline, PipelineConfig, StageConfig};
use msbd::upscaler::BicubicUpscaler;
use msbd::{Error, ImageBuffer, MaskBuffer};

fn pixel_config() -> PipelineConfig {
    PipelineConfig {
        pixel_space_mode: true,
        ..small_config()
    }
}

#[test]
fn pixel_mode_preserves_everything_off_the_mask() {
    let img = scene(48, 40, 3);
    let mask = box_mask(48, 40, 14, 10, 30, 26);
    let out = run_pipeline(
        &pixel_config(),
        &oracle(12),
        &BicubicUpscaler::default(),
        &img,
        &mask,
        "a red ball",
    )
    .unwrap();
    assert_eq!(out.image.shape(), img.shape());
    let mut changed = 0;
    for y in 0..40 {
        for x in 0..48 {
            for c in 0..3 {
                if mask.at(y, x) == 0.0 {
                    assert_eq!(out.image.get(c, y, x), img.get(c, y, x), "({c},{y},{x})");
                } else if out.image.get(c, y, x) != img.get(c, y, x) {
                    changed += 1;
                }
            }
        }
    }
    assert!(changed > 0, "nothing was edited");
}

#[test]
fn latent_mode_runs_decoder_optimization_every_stage() {
    let img = scene(40, 40, 3);
    let mask = box_mask(40, 40, 12, 12, 28, 28);
    let out = run_pipeline(
        &small_config(),
        &oracle(12),
        &BicubicUpscaler::default(),
        &img,
        &mask,
        "",
    )
    .unwrap();
    assert_eq!(out.stages.len(), 3);
    for s in &out.stages {
        let (before, after) = s.decoder_loss.expect("decoder optimization ran");
        assert!(after <= before, "{}: {after} > {before}", s.name);
    }
    // Outside the crop the image is untouched.
    assert_eq!(out.image.get(0, 0, 0), img.get(0, 0, 0));
}

#[test]
fn denoiser_call_accounting() {
    let img = scene(48, 40, 1);
    let mask = box_mask(48, 40, 6, 4, 42, 36);
    let cfg = pixel_config();
    let den = CountingDenoiser::new(oracle(12));
    let out = run_pipeline(&cfg, &den, &BicubicUpscaler::default(), &img, &mask, "").unwrap();

    let steps = cfg.sampler_steps;
    let tail = |f: f64| (f * steps as f64 - 1e-9).ceil() as usize;
    let mut expected = cfg.batch_b * steps * (1 + cfg.repaint_r);
    for (report, stage) in out.stages[1..].iter().zip(&cfg.stages) {
        assert_eq!(report.tiles_denoised, report.tiles, "mask touches every tile");
        expected += report.tiles * tail(stage.t_prime_fraction);
    }
    assert!(out.stages[2].tiles > 1);
    assert_eq!(den.calls(), expected);
    assert_eq!(out.denoiser_calls, expected);
}

#[test]
fn tiles_without_mask_are_skipped() {
    let img = scene(48, 48, 1);
    // Mask only in the top-left corner of a crop whose final grid has 3x3 tiles.
    let mask = box_mask(48, 48, 2, 2, 6, 6);
    let cfg = PipelineConfig {
        margin: 40,
        ..pixel_config()
    };
    let out = run_pipeline(&cfg, &oracle(12), &BicubicUpscaler::default(), &img, &mask, "").unwrap();
    let last = out.stages.last().unwrap();
    assert!(last.tiles > last.tiles_denoised && last.tiles_denoised > 0, "{last:?}");
}

#[test]
fn tile_order_does_not_change_the_output() {
    let img = scene(40, 40, 2);
    let mask = box_mask(40, 40, 8, 8, 32, 32);
    let cfg = PipelineConfig {
        margin: 8,
        ..small_config()
    };
    let (den, up) = (oracle(12), BicubicUpscaler::default());
    let base = Pipeline::new(cfg.clone(), &den, &up)
        .unwrap()
        .run(&img, &mask, "")
        .unwrap();
    let tiles = base.stages.last().unwrap().tiles;
    assert_eq!(tiles, 9);
    for order in [vec![8, 7, 6, 5, 4, 3, 2, 1, 0], vec![4, 0, 8, 2, 6, 1, 7, 3, 5]] {
        let out = Pipeline::new(cfg.clone(), &den, &up)
            .unwrap()
            .with_tile_order(order)
            .run(&img, &mask, "")
            .unwrap();
        assert_eq!(out.image, base.image);
    }
    let bad = Pipeline::new(cfg, &den, &up)
        .unwrap()
        .with_tile_order(vec![0, 0, 1])
        .run(&img, &mask, "");
    assert!(bad.is_err());
}

#[test]
fn single_tile_segmented_stage_matches_plain_stage() {
    let img = scene(32, 32, 1);
    let mask = box_mask(32, 32, 10, 10, 22, 22);
    let (den, up) = (oracle(12), BicubicUpscaler::default());
    let run = |segmented: bool| {
        let stage = StageConfig {
            segmented,
            tile_size: 64,
            overlap: 8,
            ..StageConfig::segmented_native(0.5, 64, 8)
        };
        let cfg = PipelineConfig {
            stages: vec![stage],
            ..small_config()
        };
        run_pipeline(&cfg, &den, &up, &img, &mask, "").unwrap().image
    };
    assert_eq!(run(true), run(false));
}

#[test]
fn runs_are_deterministic_and_seed_dependent() {
    let img = scene(32, 32, 3);
    let mask = box_mask(32, 32, 8, 8, 24, 24);
    let (den, up) = (oracle(12), BicubicUpscaler::default());
    let a = run_pipeline(&small_config(), &den, &up, &img, &mask, "x").unwrap();
    let b = run_pipeline(&small_config(), &den, &up, &img, &mask, "x").unwrap();
    assert_eq!(a.image, b.image);
    let c = run_pipeline(
        &PipelineConfig {
            seed: 12,
            ..small_config()
        },
        &den,
        &up,
        &img,
        &mask,
        "x",
    )
    .unwrap();
    assert_ne!(a.image, c.image);
}

#[test]
fn ablation_variants() {
    let img = scene(40, 40, 1);
    let mask = box_mask(40, 40, 10, 10, 30, 30);
    let (den, up) = (CountingDenoiser::new(oracle(12)), BicubicUpscaler::default());
    let first_stage_calls = {
        let cfg = pixel_config();
        cfg.batch_b * cfg.sampler_steps * (1 + cfg.repaint_r)
    };
    let mut outputs = Vec::new();
    for a in Ablation::ALL {
        den.reset();
        let cfg = pixel_config().with_ablation(a);
        let out = run_pipeline(&cfg, &den, &up, &img, &mask, "p").unwrap();
        if a.refines() {
            assert!(den.calls() > first_stage_calls, "{a}");
        } else {
            assert_eq!(den.calls(), first_stage_calls, "{a}");
        }
        for y in 0..40 {
            for x in 0..40 {
                if mask.at(y, x) == 0.0 {
                    assert_eq!(out.image.get(0, y, x), img.get(0, y, x));
                }
            }
        }
        outputs.push(out.image);
    }
    // Same first stage, different upscaling.
    assert_ne!(outputs[0], outputs[1]);
    assert_ne!(outputs[4], outputs[5]);
}

#[test]
fn intermediates_cover_every_stage_boundary() {
    let img = scene(40, 40, 1);
    let mask = box_mask(40, 40, 12, 12, 28, 28);
    let cfg = PipelineConfig {
        dump_intermediates: true,
        ..small_config()
    };
    let out = run_pipeline(&cfg, &oracle(12), &BicubicUpscaler::default(), &img, &mask, "").unwrap();
    let names: Vec<&str> = out.intermediates.iter().map(|i| i.name.as_str()).collect();
    for expected in [
        "crop",
        "stage1_input",
        "stage1_candidate_0",
        "stage1_candidate_1",
        "stage1_selected",
        "stage1_decoder_opt",
        "stage2_sr",
        "stage2_x_tilde",
        "stage2_sampled",
        "stage2_decoder_opt",
        "stage3_decoder_opt",
        "final_composite",
    ] {
        assert!(names.contains(&expected), "missing {expected} in {names:?}");
    }
    let plain = run_pipeline(
        &small_config(),
        &oracle(12),
        &BicubicUpscaler::default(),
        &img,
        &mask,
        "",
    )
    .unwrap();
    assert!(plain.intermediates.is_empty());
    assert_eq!(plain.image, out.image);
}

#[test]
fn tile_budget_and_backend_errors_carry_context() {
    let img = scene(40, 40, 1);
    let mask = box_mask(40, 40, 10, 10, 30, 30);
    let cfg = PipelineConfig {
        max_tiles: 2,
        ..pixel_config()
    };
    let err = run_pipeline(&cfg, &oracle(12), &BicubicUpscaler::default(), &img, &mask, "").unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");

    struct Broken;
    impl msbd::denoiser::DenoiserBackend for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn native_resolution(&self) -> usize {
            12
        }
        fn predict_eps(
            &self,
            _: &ImageBuffer,
            _: msbd::denoiser::NoiseLevel,
            _: &msbd::denoiser::Conditioning,
        ) -> msbd::Result<ImageBuffer> {
            Err(Error::Backend("boom".into()))
        }
    }
    let err = run_pipeline(&pixel_config(), &Broken, &BicubicUpscaler::default(), &img, &mask, "").unwrap_err();
    assert!(err.is_backend_failure());
    assert!(err.to_string().contains("stage1"), "{err}");
}

#[test]
fn stub_denoiser_mask_everywhere() {
    let img = scene(24, 24, 1);
    let mask = MaskBuffer::filled(24, 24, 1.0);
    let out = run_pipeline(
        &pixel_config(),
        &StubDenoiser { native_resolution: 12 },
        &BicubicUpscaler::default(),
        &img,
        &mask,
        "",
    )
    .unwrap();
    assert!(out.image.all_finite());
    assert_eq!(out.crop, msbd::Rect::new(0, 0, 24, 24));
}
