//! Noise schedule, timestep plan, and a deterministic DDIM rollout that
//! recovers a point-mass signal from pure noise.

use msbd::blend::ddim_sample;
use msbd::denoiser::{Conditioning, MixtureOracle, MixtureSpec};
use msbd::noise::{NoiseStream, Purpose};
use msbd::schedule::{forward_marginal, NoiseSchedule, TimestepPlan};
use msbd::ImageBuffer;

fn main() -> anyhow::Result<()> {
    let schedule = NoiseSchedule::default();
    for t in [0, 1, 250, 500, 750, 1000] {
        println!("alpha_bar[{t:4}] = {:.6}", schedule.alpha_bar(t));
    }

    let plan = TimestepPlan::uniform(schedule.t_train(), 10)?;
    println!("10-step plan: {:?}", plan.steps());
    println!("SDEdit tail at 0.4: {} steps", plan.tail_len(0.4));

    // A point mass at 0.3 (std ~ 0): every trajectory should land on it.
    let oracle = MixtureOracle::new(MixtureSpec::scalar(&[(1.0, 0.3, 1e-4)])?, 8);
    let x0 = ImageBuffer::filled(8, 8, 1, 0.3);
    let noise = NoiseStream::new(1, 0, 0).key(0, 0, Purpose::Aux).normal_like(&x0);
    let x_t = forward_marginal(&schedule, &x0, plan.level(0), &noise)?;
    let out = ddim_sample(
        &schedule,
        &oracle,
        &x_t,
        &plan,
        &Conditioning::unconditional(),
        0.0,
        NoiseStream::new(1, 0, 0),
    )?;
    println!("max |x0_hat - x0| after DDIM: {:.2e}", out.max_abs_diff(&x0)?);
    Ok(())
}
