//! Write the versioned golden-vector files a backend server is checked
//! against, then read them back and verify them with the local oracle.
//!
//! `cargo run --example golden_vectors -- [out_dir]`

use std::path::PathBuf;

use msbd::denoiser::{Conditioning, DenoiserBackend, MixtureOracle, MixtureSpec, NoiseLevel};
use msbd::protocol::{golden_cases, read_golden_vectors, write_golden_vectors, GOLDEN_BINARY, GOLDEN_MANIFEST};
use msbd::schedule::NoiseSchedule;

fn main() -> anyhow::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("msbd_golden"));
    let oracle = MixtureOracle::new(MixtureSpec::scalar(&[(0.5, 0.3, 0.1), (0.5, 0.7, 0.1)])?, 64);
    let cases = golden_cases(&oracle, &NoiseSchedule::default(), 0)?;
    write_golden_vectors(&dir, &oracle, &cases)?;
    println!(
        "wrote {} cases to {}/{{{GOLDEN_MANIFEST},{GOLDEN_BINARY}}}",
        cases.len(),
        dir.display()
    );

    let (mixture, stored) = read_golden_vectors(&dir)?;
    let replay = MixtureOracle::new(mixture, 64);
    let mut worst = 0.0f64;
    for case in &stored {
        let level = NoiseLevel {
            t: case.t,
            alpha_bar: case.alpha_bar,
        };
        let eps = replay.predict_eps(&case.x_t, level, &Conditioning::unconditional())?;
        worst = worst.max(eps.max_abs_diff(&case.eps)?);
    }
    println!("max deviation on replay: {worst:.2e} (f32 storage)");
    Ok(())
}
