//! Run every ablation variant on the same edit and compare each to the
//! full method, in the mask core and across its feathered rim.

use msbd::denoiser::{MixtureOracle, MixtureSpec};
use msbd::pipeline::{run_pipeline, Ablation, PipelineConfig, StageConfig};
use msbd::upscaler::BicubicUpscaler;
use msbd::{ImageBuffer, MaskBuffer};

fn main() -> anyhow::Result<()> {
    let (w, h) = (96, 96);
    let image = ImageBuffer::from_fn(w, h, 3, |c, y, x| {
        0.3 + 0.4 * ((x as f64 * 0.3).sin() * (y as f64 * 0.2 + c as f64).cos()).abs()
    });
    // Box with an 8-pixel linear feather.
    let ramp = |v: usize, lo: f64, hi: f64| ((v as f64 - lo).min(hi - v as f64) / 8.0 + 0.5).clamp(0.0, 1.0);
    let mask = MaskBuffer::from_fn(w, h, |y, x| ramp(x, 30.0, 66.0) * ramp(y, 28.0, 70.0));
    let oracle = MixtureOracle::new(MixtureSpec::scalar(&[(0.5, 0.25, 0.1), (0.5, 0.75, 0.1)])?, 16);
    let base = PipelineConfig {
        sampler_steps: 20,
        batch_b: 2,
        repaint_r: 2,
        margin: 8,
        stages: vec![
            StageConfig::intermediate(32, 0.4),
            StageConfig::segmented_native(0.25, 32, 8),
        ],
        ..Default::default()
    };

    let full = run_pipeline(&base, &oracle, &BicubicUpscaler::default(), &image, &mask, "")?;
    println!("variant                  calls  mean|diff| in core  mean|diff| on rim");
    for ablation in Ablation::ALL {
        let out = run_pipeline(
            &base.clone().with_ablation(ablation),
            &oracle,
            &BicubicUpscaler::default(),
            &image,
            &mask,
            "",
        )?;
        let (mut inside, mut ni, mut ring, mut nr) = (0.0, 0, 0.0, 0);
        for y in 0..h {
            for x in 0..w {
                let d = (0..3)
                    .map(|c| (out.image.get(c, y, x) - full.image.get(c, y, x)).abs())
                    .sum::<f64>()
                    / 3.0;
                match mask.at(y, x) {
                    m if m >= 1.0 => {
                        inside += d;
                        ni += 1;
                    }
                    m if m > 0.0 => {
                        ring += d;
                        nr += 1;
                    }
                    _ => {}
                }
            }
        }
        println!(
            "{} {:<22} {:>5}  {:>18.4}  {:>17.4}",
            ablation.letter(),
            format!("({ablation:?})"),
            out.denoiser_calls,
            inside / ni.max(1) as f64,
            ring / nr.max(1) as f64,
        );
    }
    Ok(())
}
