//! Per-image decoder fine-tuning: a lossy codec blurs a sharp edge in the
//! background; optimizing the decoder restores it without touching the
//! latent.

use msbd::codec::{decoder_optimize, DecoderOptConfig, ToyCodec};
use msbd::{ImageBuffer, MaskBuffer};

fn main() -> anyhow::Result<()> {
    let x = ImageBuffer::from_fn(32, 16, 1, |_, _, x| 0.5 + 0.5 * ((x as f64 - 15.3) / 1.2).tanh());
    let mask = MaskBuffer::from_fn(32, 16, |_, x| if x < 6 { 1.0 } else { 0.0 });
    let codec = ToyCodec::default();
    let z = codec.encode(&x);
    println!(
        "latent {}x{}, initial decode error {:.4}",
        z.z.width(),
        z.z.height(),
        codec.decode_initial(&z)?.max_abs_diff(&x)?
    );

    let cfg = DecoderOptConfig::default();
    let out = decoder_optimize(&codec, &z, &x, &mask, &cfg)?;
    for (i, loss) in out.history.iter().enumerate().step_by(20) {
        println!("step {i:3}: loss {loss:.5}");
    }
    println!(
        "loss {:.5} -> {:.5} ({:.0}% of initial)",
        out.initial.total(),
        out.final_loss.total(),
        100.0 * out.final_loss.total() / out.initial.total()
    );
    let decoded = codec.decode(&out.params, &z)?;
    let initial = codec.decode_initial(&z)?;
    let edge: Vec<String> = (12..20)
        .map(|x| format!("{:.2}/{:.2}", x_at(&decoded, x), x_at(&initial, x)))
        .collect();
    println!("tuned/initial across the edge: {}", edge.join(" "));
    Ok(())
}

fn x_at(img: &ImageBuffer, x: usize) -> f64 {
    img.get(0, 8, x)
}
