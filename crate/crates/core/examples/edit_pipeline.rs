//! End-to-end edit with the in-process oracle backend. Writes the input,
//! mask, result and every intermediate into a directory.
//!
//! `cargo run --release --example edit_pipeline -- [out_dir]`

use std::path::PathBuf;

use msbd::denoiser::{MixtureOracle, MixtureSpec};
use msbd::pipeline::{Pipeline, PipelineConfig};
use msbd::png_io::{write_image, BitDepth};
use msbd::upscaler::BicubicUpscaler;
use msbd::{ImageBuffer, MaskBuffer};

fn main() -> anyhow::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("msbd_edit"));
    std::fs::create_dir_all(&dir)?;

    let (w, h) = (320, 240);
    let image = ImageBuffer::from_fn(w, h, 3, |c, y, x| {
        let sky = 0.4 + 0.4 * (1.0 - y as f64 / h as f64);
        [sky * 0.6, sky * 0.8, sky][c] * (1.0 + 0.05 * ((x / 8 + y / 8) % 2) as f64)
    });
    let mask = MaskBuffer::from_fn(w, h, |y, x| {
        let d = ((x as f64 - 200.0) / 50.0).powi(2) + ((y as f64 - 120.0) / 35.0).powi(2);
        (1.5 - d).clamp(0.0, 1.0)
    });

    let cfg = PipelineConfig {
        dump_intermediates: true,
        stages: vec![
            msbd::pipeline::StageConfig::intermediate(128, 0.4),
            msbd::pipeline::StageConfig::segmented_native(0.25, 96, 16),
        ],
        ..Default::default()
    };
    let oracle = MixtureOracle::new(MixtureSpec::scalar(&[(0.5, 0.3, 0.1), (0.5, 0.7, 0.1)])?, 64);
    let out = Pipeline::new(cfg, &oracle, &BicubicUpscaler::default())?.run(&image, &mask, "a balloon")?;

    println!(
        "crop {:?}, candidate {} chosen from scores {:?}",
        out.crop, out.selected, out.scores
    );
    for s in &out.stages {
        println!(
            "{}: {}x{}, {}/{} tiles denoised, {} steps each, decoder loss {:?}",
            s.name, s.width, s.height, s.tiles_denoised, s.tiles, s.steps_per_tile, s.decoder_loss
        );
    }
    println!("{} denoiser calls", out.denoiser_calls);

    write_image(dir.join("input.png"), &image, BitDepth::Eight)?;
    write_image(dir.join("mask.png"), mask.as_image(), BitDepth::Eight)?;
    write_image(dir.join("output.png"), &out.image, BitDepth::Eight)?;
    for (i, item) in out.intermediates.iter().enumerate() {
        write_image(
            dir.join(format!("{i:02}_{}.png", item.name)),
            &item.image,
            BitDepth::Eight,
        )?;
    }
    println!("wrote {}", dir.display());
    Ok(())
}
