//! Reward fine-tuning through the sampler.
//!
//! Only `k` randomly chosen Euler steps record their model call; every model
//! call sees a stop-gradient copy of the state, so the gradient of the final
//! sample is `Σ_{i∈S} Δ_i ∂v(sg(x_i), t_i)/∂θ` with no cross-step terms.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::nn::{collect_grads, flatten, ParamSet, VelocityModel};
use crate::optim::gradient_step;
use crate::rng::{named, Rng};
use crate::sampler::{make_schedule, SampleSchedule};
use crate::tensor::{Tape, Tensor};
use crate::vae::CausalVae;

/// `k` distinct step indices from `0..n`, uniformly, sorted.
pub fn select_grad_steps(n: usize, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(config(format!("gradient step count k={k} must lie in 1..={n}")));
    }
    let mut s = sample(rng, n, k).into_vec();
    s.sort_unstable();
    Ok(s)
}

#[derive(Debug)]
pub struct Rollout {
    pub x1: Tensor,
    /// State before each step (values only).
    pub states: Vec<Tensor>,
}

/// Euler rollout where only steps in `selected` record onto the tape that
/// `params` are bound to. Values match `euler_sample` without guidance
/// bit for bit whatever `selected` is.
pub fn rollout_with_selected_grads(
    model: &dyn VelocityModel,
    params: &[Tensor],
    x0: &Tensor,
    schedule: &SampleSchedule,
    selected: &[usize],
    cond: &Tensor,
) -> Result<Rollout> {
    if let Some(&bad) = selected.iter().find(|&&i| i >= schedule.steps) {
        return Err(config(format!("selected step {bad} outside 0..{}", schedule.steps)));
    }
    let plain: Vec<Tensor> = params.iter().map(Tensor::stop_gradient).collect();
    let mut x = x0.clone();
    let mut states = Vec::with_capacity(schedule.steps);
    for (i, dt) in schedule.deltas().into_iter().enumerate() {
        let input = x.stop_gradient();
        let p = if selected.contains(&i) { params } else { &plain[..] };
        let v = model.velocity(p, &input, &vec![schedule.timesteps[i]; x.shape()[0]], cond)?;
        states.push(input);
        x = x.add(&v.scale(dt))?;
        if !x.all_finite() {
            return Err(Error::NonFinite { context: "reward rollout state".into(), step: i });
        }
    }
    Ok(Rollout { x1: x, states })
}

pub fn sample_with_selected_grads(
    model: &dyn VelocityModel,
    params: &[Tensor],
    x0: &Tensor,
    schedule: &SampleSchedule,
    selected: &[usize],
    cond: &Tensor,
) -> Result<Tensor> {
    Ok(rollout_with_selected_grads(model, params, x0, schedule, selected, cond)?.x1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardTarget {
    /// Decode latent frame 0 only and score the pixels.
    FirstFrame,
    FullSample,
}

/// Toy differentiable rewards. Views are `[B, C, ...]`; the leading view
/// axis is treated as channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RewardKind {
    /// `-‖mean(x) - μ*‖²` with the mean taken per channel.
    TargetMean { mu: Vec<f64> },
    /// Negative mean squared difference between neighbours along the last
    /// one or two axes.
    Smoothness,
    /// Frozen random two-layer scorer applied per channel vector, averaged.
    RandomMlp { seed: u64, hidden: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub target: RewardTarget,
    #[serde(flatten)]
    pub kind: RewardKind,
}

impl RewardKind {
    fn channels_last(views: &Tensor, c: usize) -> Result<Tensor> {
        let b = views.shape()[0];
        let rest = views.len() / (b * c);
        Ok(views.reshape([b, c, rest])?.permute(&[0, 2, 1])?.reshape([b * rest, c])?)
    }

    pub fn score(&self, views: &Tensor) -> Result<Tensor> {
        if views.rank() < 2 {
            return Err(Error::Shape(format!("reward views must be [B, C, ...], got {:?}", views.shape())));
        }
        let c = views.shape()[1];
        match self {
            RewardKind::TargetMean { mu } => {
                if mu.len() != c {
                    return Err(Error::Shape(format!("target mean has {} channels, views have {c}", mu.len())));
                }
                let m = Self::channels_last(views, c)?.mean_axis(0)?;
                Ok(m.sub(&Tensor::from_vec(mu.clone()))?.square().sum().neg())
            }
            RewardKind::Smoothness => {
                let r = views.rank();
                let axes: Vec<usize> = if r >= 4 { vec![r - 2, r - 1] } else { vec![r - 1] };
                let mut total = Tensor::scalar(0.0);
                for a in axes {
                    let n = views.shape()[a];
                    if n < 2 {
                        continue;
                    }
                    let d = views.narrow(a, 1, n - 1)?.sub(&views.narrow(a, 0, n - 1)?)?;
                    total = total.add(&d.square().mean())?;
                }
                Ok(total.neg())
            }
            RewardKind::RandomMlp { seed, hidden } => {
                let mut rng = named(*seed, "reward-mlp");
                let w1 = Tensor::randn([c, *hidden], (1.0 / c as f64).sqrt(), &mut rng);
                let b1 = Tensor::randn([*hidden], 0.5, &mut rng);
                let w2 = Tensor::randn([*hidden, 1], (1.0 / *hidden as f64).sqrt(), &mut rng);
                let x = Self::channels_last(views, c)?;
                Ok(x.matmul(&w1)?.add_last(&b1)?.tanh().matmul(&w2)?.mean())
            }
        }
    }
}

impl RewardSpec {
    /// What the reward sees: decoded first frames `[B, 3, H, W]`, or the
    /// raw sample.
    pub fn views(&self, x1: &Tensor, vae: Option<&CausalVae>) -> Result<Tensor> {
        match self.target {
            RewardTarget::FullSample => Ok(x1.clone()),
            RewardTarget::FirstFrame => {
                let vae = vae.ok_or_else(|| config("first-frame reward needs a VAE"))?;
                let s = x1.shape();
                if s.len() != 5 {
                    return Err(Error::Shape(format!("first-frame reward needs [B, T', C, H', W'], got {s:?}")));
                }
                let mut frames = Vec::with_capacity(s[0]);
                for b in 0..s[0] {
                    let f = vae.decode_first_frame(&x1.narrow(0, b, 1)?.reshape([s[1], s[2], s[3], s[4]])?)?;
                    let fs = f.shape().to_vec();
                    frames.push(f.reshape([1, fs[0], fs[1], fs[2]])?);
                }
                let refs: Vec<&Tensor> = frames.iter().collect();
                Ok(Tensor::concat(&refs, 0)?)
            }
        }
    }

    pub fn evaluate(&self, x1: &Tensor, vae: Option<&CausalVae>) -> Result<Tensor> {
        self.kind.score(&self.views(x1, vae)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlhfConfig {
    /// Gradient-carrying steps per rollout.
    pub k: usize,
    /// Sampler steps.
    pub steps: usize,
    pub shift: f64,
    /// KL weight; shipped presets keep it at 0.
    pub beta: f64,
    pub frames_short: usize,
    pub lr: f64,
    pub reward: RewardSpec,
}

impl Default for RlhfConfig {
    fn default() -> Self {
        Self {
            k: 4,
            steps: 20,
            shift: 1.0,
            beta: 0.0,
            frames_short: 29,
            lr: 1e-4,
            reward: RewardSpec { target: RewardTarget::FirstFrame, kind: RewardKind::TargetMean { mu: vec![0.7, 0.4, 0.3] } },
        }
    }
}

impl RlhfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.steps {
            return Err(config(format!("k={} must lie in 1..={}", self.k, self.steps)));
        }
        if !(self.beta >= 0.0) || !(self.lr >= 0.0) {
            return Err(config("beta and lr must be non-negative"));
        }
        if self.frames_short == 0 || !(self.frames_short - 1).is_multiple_of(crate::video::TIME_STRIDE) {
            return Err(config(format!("frames_short={} is not 4k+1", self.frames_short)));
        }
        Ok(())
    }
}

/// Wraps a model and counts its velocity calls.
pub struct CountingModel<'a> {
    pub inner: &'a dyn VelocityModel,
    calls: AtomicUsize,
}

impl<'a> CountingModel<'a> {
    pub fn new(inner: &'a dyn VelocityModel) -> Self {
        Self { inner, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn velocity(&self, x: &Tensor, t: &[f64], cond: &Tensor) -> Result<Tensor> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.velocity(self.inner.params().tensors(), x, t, cond)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RlhfStepReport {
    /// Reward before the update.
    pub reward: f64,
    pub grad_norm: f64,
    pub selected: Vec<usize>,
}

/// Everything one reward-ascent step needs besides the model.
pub struct RlhfContext<'a> {
    pub cfg: &'a RlhfConfig,
    /// Noise shape including the batch axis.
    pub x_shape: Vec<usize>,
    pub cond: Tensor,
    pub vae: Option<&'a CausalVae>,
    /// Only consulted when `beta > 0`.
    pub reference: Option<&'a CountingModel<'a>>,
}

/// Ascent gradient of `r(x1) - β Σ_{i∈S} mean‖v_θ - v_ref‖²` for a fixed
/// noise draw and step selection; returns `(reward, grads)`.
pub fn reward_gradient(
    model: &dyn VelocityModel,
    ctx: &RlhfContext<'_>,
    schedule: &SampleSchedule,
    x0: &Tensor,
    selected: &[usize],
) -> Result<(f64, Vec<Tensor>)> {
    let tape = Tape::new();
    let bound = model.params().bind(Some(&tape));
    let ro = rollout_with_selected_grads(model, &bound, x0, schedule, selected, &ctx.cond)?;
    let reward = ctx.cfg.reward.evaluate(&ro.x1, ctx.vae)?;
    let r = reward.item();
    if !r.is_finite() {
        return Err(Error::NonFinite { context: format!("reward (selected steps {selected:?})"), step: 0 });
    }
    let mut objective = reward;
    if ctx.cfg.beta > 0.0 {
        let reference = ctx.reference.ok_or_else(|| config("beta > 0 needs a reference model"))?;
        for &i in selected {
            let x = &ro.states[i];
            let t = vec![schedule.timesteps[i]; x.shape()[0]];
            let v = model.velocity(&bound, x, &t, &ctx.cond)?;
            let v_ref = reference.velocity(x, &t, &ctx.cond)?;
            objective = objective.sub(&v.sub(&v_ref)?.square().mean().scale(ctx.cfg.beta))?;
        }
    }
    if !objective.is_recorded() {
        return Ok((r, model.params().tensors().iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect()));
    }
    tape.backward(&objective)?;
    Ok((r, collect_grads(&bound)))
}

/// One ascent step `θ ← θ + lr ∂r/∂θ`.
pub fn rlhf_step(model: &mut dyn VelocityModel, ctx: &RlhfContext<'_>, rng: &mut Rng) -> Result<RlhfStepReport> {
    let cfg = ctx.cfg;
    cfg.validate()?;
    let schedule = make_schedule(cfg.steps, cfg.shift)?;
    let x0 = Tensor::randn(ctx.x_shape.clone(), 1.0, rng);
    let selected = select_grad_steps(cfg.steps, cfg.k, rng)?;
    let (reward, grads) = reward_gradient(model, ctx, &schedule, &x0, &selected)?;
    let grad_norm = flatten(&grads).iter().map(|g| g * g).sum::<f64>().sqrt();
    if !grad_norm.is_finite() {
        return Err(Error::NonFinite { context: format!("reward gradient (reward {reward})"), step: 0 });
    }
    gradient_step(model.params_mut(), &grads, cfg.lr, 1.0)?;
    Ok(RlhfStepReport { reward, grad_norm, selected })
}

/// Mean reward over a fixed noise batch with plain sampling.
pub fn evaluate_reward(
    model: &dyn VelocityModel,
    spec: &RewardSpec,
    schedule: &SampleSchedule,
    x0: &Tensor,
    cond: &Tensor,
    vae: Option<&CausalVae>,
) -> Result<f64> {
    let x1 = crate::sampler::euler_sample(model, model.params().tensors(), x0, schedule, None, cond, None)?;
    Ok(spec.evaluate(&x1, vae)?.item())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardRow {
    pub step: usize,
    pub reward_a: f64,
    pub reward_c: f64,
    pub grad_norm: f64,
}

pub fn write_reward_csv(rows: &[RewardRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "step,reward_a,reward_c,grad_norm")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.step, r.reward_a, r.reward_c, r.grad_norm)?;
    }
    Ok(())
}

/// Parameters of `model` unchanged (bitwise) since `before`.
pub fn params_unchanged(before: &ParamSet, model: &dyn VelocityModel) -> bool {
    before == model.params()
}
