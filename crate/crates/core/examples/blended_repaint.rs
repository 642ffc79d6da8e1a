//! The blended sampling loop on its own: watch the masked region evolve
//! while the background is held to noised copies of the input, and count
//! denoiser calls for a few Repaint settings.

use msbd::blend::{blended_loop, BlendInputs, StepView};
use msbd::denoiser::{Conditioning, CountingDenoiser, MixtureOracle, MixtureSpec};
use msbd::noise::NoiseStream;
use msbd::schedule::{NoiseSchedule, TimestepPlan};
use msbd::{ImageBuffer, MaskBuffer};

fn main() -> anyhow::Result<()> {
    let schedule = NoiseSchedule::default();
    let plan = TimestepPlan::uniform(schedule.t_train(), 20)?;
    let oracle = CountingDenoiser::new(MixtureOracle::new(
        MixtureSpec::scalar(&[(0.5, 0.2, 0.05), (0.5, 0.8, 0.05)])?,
        16,
    ));

    let x = ImageBuffer::from_fn(16, 16, 1, |_, y, x| (x + y) as f64 / 30.0);
    let mask = MaskBuffer::from_fn(16, 16, |y, x| {
        if (4..12).contains(&x) && (4..12).contains(&y) {
            1.0
        } else {
            0.0
        }
    });
    let inputs = BlendInputs::new(
        x.clone(),
        mask.clone(),
        Conditioning::prompt("a square"),
        plan.clone(),
        NoiseStream::new(7, 0, 0),
    )?;

    let mut log = |v: &StepView<'_>| {
        if v.step % 5 == 4 {
            let inside: f64 = (4..12)
                .flat_map(|y| (4..12).map(move |x| (y, x)))
                .map(|(y, x)| v.x.get(0, y, x))
                .sum::<f64>()
                / 64.0;
            println!("step {:2} -> level {:4}: masked mean {inside:.3}", v.step, v.level);
        }
    };
    let out = blended_loop(&schedule, &oracle, &inputs, 0, 2, Some(&mut log))?;
    println!(
        "corner kept: input {:.3}, output {:.3}",
        x.get(0, 0, 0),
        out.get(0, 0, 0)
    );

    for r in [0, 1, 5] {
        oracle.reset();
        blended_loop(&schedule, &oracle, &inputs, 0, r, None)?;
        println!(
            "R = {r}: {} denoiser calls for {} plan steps",
            oracle.calls(),
            plan.len()
        );
    }
    // Later stages start part-way down the plan.
    oracle.reset();
    blended_loop(&schedule, &oracle, &inputs, plan.len() - plan.tail_len(0.25), 0, None)?;
    println!("SDEdit start at 0.25: {} calls", oracle.calls());
    Ok(())
}
