//! Blended-diffusion sampling loops.
//!
//! One loop drives both stage kinds: the first stage starts at the top of
//! the plan and repeats every step `R` times (Repaint), while later stages
//! start part-way down the plan from a forward-noised init (SDEdit) and run
//! with `R = 0`. After every denoising step the unmasked region is replaced
//! with a forward-marginal sample of the background at the new level.
//!
//! Noise is drawn from [`NoiseStream`] keys indexed by absolute plan step,
//! so a loop started at step `k` sees the same numbers for steps `k..` as a
//! loop started at step 0.

use crate::buffer::{ImageBuffer, MaskBuffer};
use crate::denoiser::{Conditioning, DenoiserBackend, NoiseLevel};
use crate::error::{Error, Result};
use crate::image_ops::blend_masked;
use crate::noise::{NoiseStream, Purpose};
use crate::schedule::{ddim_step, forward_jump, forward_marginal, NoiseSchedule, TimestepPlan};

#[derive(Debug, Clone)]
pub struct BlendInputs {
    /// Background / init image (x̃).
    pub x_tilde: ImageBuffer,
    pub mask: MaskBuffer,
    pub cond: Conditioning,
    pub plan: TimestepPlan,
    pub stream: NoiseStream,
    /// DDIM η; 0 makes every step deterministic.
    pub eta: f64,
}

impl BlendInputs {
    pub fn new(
        x_tilde: ImageBuffer,
        mask: MaskBuffer,
        cond: Conditioning,
        plan: TimestepPlan,
        stream: NoiseStream,
    ) -> Result<Self> {
        mask.ensure_matches(&x_tilde)?;
        Ok(Self {
            x_tilde,
            mask,
            cond,
            plan,
            stream,
            eta: 0.0,
        })
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }
}

/// State after one outer plan step, handed to trace callbacks.
#[derive(Debug)]
pub struct StepView<'a> {
    /// Absolute plan index.
    pub step: usize,
    /// Level reached after the step.
    pub level: usize,
    /// Composited sample at `level`.
    pub x: &'a ImageBuffer,
    /// Noised background used for every composite of this step.
    pub background: &'a ImageBuffer,
}

#[allow(clippy::too_many_arguments)]
fn denoise_once<D: DenoiserBackend + ?Sized>(
    schedule: &NoiseSchedule,
    denoiser: &D,
    inputs: &BlendInputs,
    x_t: &ImageBuffer,
    t: usize,
    t_prev: usize,
    step: usize,
    inner: usize,
) -> Result<ImageBuffer> {
    let level = NoiseLevel {
        t,
        alpha_bar: schedule.alpha_bar(t),
    };
    let eps = denoiser.predict_eps(x_t, level, &inputs.cond)?;
    x_t.ensure_same_shape(&eps)
        .map_err(|e| Error::Protocol(format!("denoiser returned wrong shape: {e}")))?;
    let noise = (inputs.eta > 0.0).then(|| inputs.stream.key(step, inner, Purpose::Ddim).normal_like(x_t));
    ddim_step(schedule, x_t, &eps, t, t_prev, inputs.eta, noise.as_ref())
}

/// Run plan steps `start..` with `repaint_r` Repaint iterations per step.
///
/// Makes exactly `(plan.len() - start) * (1 + repaint_r)` denoiser calls.
pub fn blended_loop<D: DenoiserBackend + ?Sized>(
    schedule: &NoiseSchedule,
    denoiser: &D,
    inputs: &BlendInputs,
    start: usize,
    repaint_r: usize,
    mut on_step: Option<&mut dyn FnMut(&StepView<'_>)>,
) -> Result<ImageBuffer> {
    let plan = &inputs.plan;
    if start >= plan.len() {
        return Ok(inputs.x_tilde.clone());
    }
    if plan.level(0) > schedule.t_train() {
        return Err(Error::invalid(format!(
            "plan reaches level {} beyond t_train = {}",
            plan.level(0),
            schedule.t_train()
        )));
    }
    inputs.mask.ensure_matches(&inputs.x_tilde)?;
    let x_tilde = &inputs.x_tilde;
    let init_noise = inputs.stream.key(start, 0, Purpose::Init).normal_like(x_tilde);
    let mut x = forward_marginal(schedule, x_tilde, plan.level(start), &init_noise)?;

    for step in start..plan.len() {
        let (t, t_prev) = (plan.level(step), plan.next_level(step));
        let denoised = denoise_once(schedule, denoiser, inputs, &x, t, t_prev, step, 0)?;
        let bg_noise = inputs.stream.key(step, 0, Purpose::Background).normal_like(x_tilde);
        let background = forward_marginal(schedule, x_tilde, t_prev, &bg_noise)?;
        let mut x_prev = blend_masked(&denoised, &background, &inputs.mask)?;

        for r in 1..=repaint_r {
            let renoise = inputs.stream.key(step, r, Purpose::Renoise).normal_like(x_tilde);
            let x_t = forward_jump(schedule, &x_prev, t_prev, t, &renoise)?;
            let denoised = denoise_once(schedule, denoiser, inputs, &x_t, t, t_prev, step, r)?;
            x_prev = blend_masked(&denoised, &background, &inputs.mask)?;
        }

        if let Some(cb) = on_step.as_mut() {
            cb(&StepView {
                step,
                level: t_prev,
                x: &x_prev,
                background: &background,
            });
        }
        x = x_prev;
    }
    Ok(x)
}

/// First stage: blended diffusion with Repaint over the whole plan.
pub fn first_stage_sample<D: DenoiserBackend + ?Sized>(
    schedule: &NoiseSchedule,
    denoiser: &D,
    inputs: &BlendInputs,
    repaint_r: usize,
) -> Result<ImageBuffer> {
    blended_loop(schedule, denoiser, inputs, 0, repaint_r, None)
}

/// Later stages: forward-noise x̃ to `t_prime_fraction` of the plan, then
/// blended denoising without Repaint.
pub fn sdedit_blended_stage<D: DenoiserBackend + ?Sized>(
    schedule: &NoiseSchedule,
    denoiser: &D,
    inputs: &BlendInputs,
    t_prime_fraction: f64,
) -> Result<ImageBuffer> {
    if !(0.0..=1.0).contains(&t_prime_fraction) {
        return Err(Error::invalid(format!("t' fraction {t_prime_fraction} outside [0, 1]")));
    }
    let start = sdedit_start(&inputs.plan, t_prime_fraction);
    blended_loop(schedule, denoiser, inputs, start, 0, None)
}

/// First plan index run by an SDEdit stage at `t_prime_fraction`.
pub fn sdedit_start(plan: &TimestepPlan, t_prime_fraction: f64) -> usize {
    plan.len() - plan.tail_len(t_prime_fraction)
}

/// Unconstrained DDIM sampling from `x_start` at the top of `plan`.
pub fn ddim_sample<D: DenoiserBackend + ?Sized>(
    schedule: &NoiseSchedule,
    denoiser: &D,
    x_start: &ImageBuffer,
    plan: &TimestepPlan,
    cond: &Conditioning,
    eta: f64,
    stream: NoiseStream,
) -> Result<ImageBuffer> {
    let mut x = x_start.clone();
    for step in 0..plan.len() {
        let (t, t_prev) = (plan.level(step), plan.next_level(step));
        let level = NoiseLevel {
            t,
            alpha_bar: schedule.alpha_bar(t),
        };
        let eps = denoiser.predict_eps(&x, level, cond)?;
        let noise = (eta > 0.0).then(|| stream.key(step, 0, Purpose::Ddim).normal_like(&x));
        x = ddim_step(schedule, &x, &eps, t, t_prev, eta, noise.as_ref())?;
    }
    Ok(x)
}
