//! Sample a two-mode 1-D mixture with the analytic oracle and print a
//! histogram of the results.
//!
//! `cargo run --release --example oracle_mixture -- [samples] [steps]`

use msbd::demo::mixture_demo;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(5000);
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(50);

    let stats = mixture_demo(1.0, 0.1, n, steps, 0)?;
    let peak = stats.histogram.iter().map(|b| b.count).max().unwrap_or(1).max(1);
    for bin in &stats.histogram {
        let bar = "#".repeat(bin.count * 60 / peak);
        println!("{:+.1} {bar}", bin.lo);
    }
    for m in &stats.modes {
        println!(
            "mode {:+.0}: mass {:.3}, mean {:+.4}, std {:.4}",
            m.center, m.mass, m.mean, m.std
        );
    }
    println!(
        "overall mean {:+.4} over {} samples, {} steps",
        stats.mean, stats.samples, stats.steps
    );
    Ok(())
}
