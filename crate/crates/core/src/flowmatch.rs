//! Flow-matching objective on straight noise→data paths.
//!
//! Convention: `t = 0` is pure noise `x0 ~ N(0, I)`, `t = 1` is data `x1`,
//! `x_t = (1 - t) x0 + t x1` and the regression target is `x1 - x0`.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::nn::{collect_grads, ParamSet, VelocityModel};
use crate::optim::Adam;
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor};

/// Sampled times are kept inside `[T_MIN, 1 - T_MIN]`.
pub const T_MIN: f64 = 1e-5;

/// Timestep warp `t / (s - (s - 1) t)`. For `s > 1` it pushes mass toward
/// the noise end (`t' <= t`).
pub fn shift_transform(t: f64, s: f64) -> Result<f64> {
    if !(s >= 1.0) || !s.is_finite() {
        return Err(config(format!("flow shift must be >= 1, got {s}")));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Contract(format!("timestep {t} outside [0, 1]")));
    }
    Ok(warp(t, s))
}

/// Inverse of [`shift_transform`]: the same warp with `s → 1/s`.
pub fn unshift(t: f64, s: f64) -> Result<f64> {
    if !(s >= 1.0) {
        return Err(config(format!("flow shift must be >= 1, got {s}")));
    }
    Ok(warp(t, 1.0 / s))
}

fn warp(t: f64, s: f64) -> f64 {
    if s == 1.0 {
        return t;
    }
    t / (s - (s - 1.0) * t)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TimestepDist {
    Uniform,
    LogitNormal { mean: f64, std: f64 },
}

impl Default for TimestepDist {
    fn default() -> Self {
        TimestepDist::LogitNormal { mean: 0.0, std: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimestepSampler {
    pub dist: TimestepDist,
    pub train_shift: f64,
}

impl TimestepSampler {
    pub fn new(dist: TimestepDist, train_shift: f64) -> Result<Self> {
        if let TimestepDist::LogitNormal { std, mean } = dist {
            if !(std > 0.0) || !mean.is_finite() {
                return Err(config(format!("logit-normal std must be > 0, got {std}")));
            }
        }
        if !(train_shift >= 1.0) {
            return Err(config(format!("train shift must be >= 1, got {train_shift}")));
        }
        Ok(Self { dist, train_shift })
    }

    pub fn uniform() -> Self {
        Self { dist: TimestepDist::Uniform, train_shift: 1.0 }
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        let t = match self.dist {
            TimestepDist::Uniform => rng.random::<f64>(),
            TimestepDist::LogitNormal { mean, std } => {
                let z: f64 = rng.sample(StandardNormal);
                crate::tensor::sigmoid(mean + std * z)
            }
        };
        warp(t, self.train_shift).clamp(T_MIN, 1.0 - T_MIN)
    }

    pub fn sample_n(&self, n: usize, rng: &mut Rng) -> Vec<f64> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

fn check_pair(x0: &Tensor, x1: &Tensor) -> Result<()> {
    if x0.shape() != x1.shape() {
        return Err(Error::Shape(format!("x0 {:?} and x1 {:?} differ", x0.shape(), x1.shape())));
    }
    Ok(())
}

/// Per-row blend `(1 - t_b) x0[b] + t_b x1[b]` along the leading axis.
pub fn interpolate(x0: &Tensor, x1: &Tensor, t: &[f64]) -> Result<Tensor> {
    check_pair(x0, x1)?;
    let b = x0.shape().first().copied().unwrap_or(1);
    if t.len() != b {
        return Err(Error::Shape(format!("{} timesteps for batch of {b}", t.len())));
    }
    if let Some(bad) = t.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Contract(format!("timestep {bad} outside [0, 1]")));
    }
    let per = x0.len() / b.max(1);
    let out = x0
        .values()
        .iter()
        .zip(x1.values())
        .enumerate()
        .map(|(i, (a, d))| {
            let ti = t[i / per];
            (1.0 - ti) * a + ti * d
        })
        .collect();
    Ok(Tensor::new(x0.shape().to_vec(), out)?)
}

/// `x1 - x0`; independent of t.
pub fn velocity_target(x0: &Tensor, x1: &Tensor) -> Result<Tensor> {
    check_pair(x0, x1)?;
    Ok(x1.sub(x0)?)
}

/// Mean squared error over every element.
pub fn fm_loss(v_pred: &Tensor, v_target: &Tensor) -> Result<Tensor> {
    Ok(v_pred.sub(v_target)?.square().mean())
}

/// One training example group: noise, data, per-row times and conditioning.
#[derive(Clone, Debug)]
pub struct FlowBatch {
    pub x0: Tensor,
    pub x1: Tensor,
    pub t: Vec<f64>,
    pub cond: Tensor,
}

impl FlowBatch {
    pub fn new(x0: Tensor, x1: Tensor, t: Vec<f64>, cond: Tensor) -> Result<Self> {
        check_pair(&x0, &x1)?;
        if t.len() != x1.shape()[0] || cond.shape().first() != Some(&t.len()) {
            return Err(Error::Shape(format!(
                "batch of {} rows with {} times and cond {:?}",
                x1.shape()[0],
                t.len(),
                cond.shape()
            )));
        }
        Ok(Self { x0, x1, t, cond })
    }

    /// Draws noise and timesteps for data `x1`.
    pub fn draw(x1: Tensor, cond: Tensor, sampler: &TimestepSampler, rng: &mut Rng) -> Result<Self> {
        let b = x1.shape()[0];
        let x0 = Tensor::randn(x1.shape().to_vec(), 1.0, rng);
        let t = sampler.sample_n(b, rng);
        Self::new(x0, x1, t, cond)
    }

    pub fn numel(&self) -> usize {
        self.x1.len()
    }
}

/// Regularizer pulling predictions toward a frozen reference model's
/// velocities: `weight · mean((v_θ - v_ref)²)`.
#[derive(Clone, Debug)]
pub struct Anchor {
    pub reference: ParamSet,
    pub weight: f64,
}

/// Image:video sample mix for joint training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointMix {
    pub images: usize,
    pub videos: usize,
}

impl Default for JointMix {
    fn default() -> Self {
        // stage-1 proportions, 4096 images : 2048 videos
        Self { images: 2, videos: 1 }
    }
}

impl JointMix {
    /// Splits `total` samples into (images, videos) by the configured ratio.
    pub fn split(&self, total: usize) -> (usize, usize) {
        let denom = self.images + self.videos;
        if denom == 0 {
            return (0, 0);
        }
        let images = (total * self.images + denom / 2) / denom;
        (images, total - images)
    }
}

/// Loss over several groups (e.g. an image group with one latent frame and
/// a video group) as the mean over all of their elements.
pub fn joint_loss(
    model: &dyn VelocityModel,
    bound: &[Tensor],
    groups: &[FlowBatch],
    anchor: Option<&Anchor>,
) -> Result<Tensor> {
    let total: usize = groups.iter().map(FlowBatch::numel).sum();
    if total == 0 {
        return Err(Error::Contract("empty training batch".into()));
    }
    let mut loss: Option<Tensor> = None;
    for g in groups {
        let xt = interpolate(&g.x0, &g.x1, &g.t)?;
        let target = velocity_target(&g.x0, &g.x1)?;
        let pred = model.velocity(bound, &xt, &g.t, &g.cond)?;
        let w = g.numel() as f64 / total as f64;
        let mut term = fm_loss(&pred, &target)?.scale(w);
        if let Some(a) = anchor {
            let reference = model.velocity(a.reference.tensors(), &xt, &g.t, &g.cond)?;
            term = term.add(&fm_loss(&pred, &reference)?.scale(w * a.weight))?;
        }
        loss = Some(match loss {
            Some(l) => l.add(&term)?,
            None => term,
        });
    }
    Ok(loss.expect("non-empty"))
}

/// One Adam step on the flow-matching loss. Returns the pre-step loss.
pub fn train_step(model: &mut dyn VelocityModel, batch: &FlowBatch, opt: &mut Adam) -> Result<f64> {
    train_step_groups(model, std::slice::from_ref(batch), opt, None)
}

pub fn train_step_groups(
    model: &mut dyn VelocityModel,
    groups: &[FlowBatch],
    opt: &mut Adam,
    anchor: Option<&Anchor>,
) -> Result<f64> {
    let tape = Tape::new();
    let bound = model.params().bind(Some(&tape));
    let loss = joint_loss(model, &bound, groups, anchor)?;
    let value = loss.item();
    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: format!(
                "flow-matching loss (batch rows {:?}, param norm {:.3e})",
                groups.iter().map(|g| g.t.len()).collect::<Vec<_>>(),
                model.params().flat().iter().map(|v| v * v).sum::<f64>().sqrt()
            ),
            step: opt.steps_taken() as usize,
        });
    }
    tape.backward(&loss)?;
    let grads = collect_grads(&bound);
    opt.step(model.params_mut(), &grads)?;
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn shift_examples() {
        for t in [0.0, 0.1, 0.5, 0.9, 1.0] {
            assert_eq!(shift_transform(t, 1.0).unwrap(), t);
        }
        for s in [1.0, 3.0, 17.0] {
            assert_eq!(shift_transform(0.0, s).unwrap(), 0.0);
            assert_eq!(shift_transform(1.0, s).unwrap(), 1.0);
        }
        let v = shift_transform(0.5, 17.0).unwrap();
        assert!((v - 0.5 / 9.0).abs() < 1e-15);
        assert!(matches!(shift_transform(0.5, 0.5), Err(Error::Config(_))));
        assert!(shift_transform(1.5, 2.0).is_err());
    }

    #[test]
    fn shift_inverse_and_monotone() {
        let mut prev = -1.0;
        for i in 0..=1000 {
            let t = i as f64 / 1000.0;
            let y = shift_transform(t, 17.0).unwrap();
            assert!(y > prev);
            assert!(y <= t);
            prev = y;
            assert!((unshift(y, 17.0).unwrap() - t).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolate_endpoints_and_midpoint() {
        let mut rng = seeded(2);
        let x0 = Tensor::randn([3, 4], 1.0, &mut rng);
        let x1 = Tensor::randn([3, 4], 1.0, &mut rng);
        assert_eq!(interpolate(&x0, &x1, &[0.0; 3]).unwrap(), x0);
        assert_eq!(interpolate(&x0, &x1, &[1.0; 3]).unwrap(), x1);
        let a = Tensor::zeros([1, 1]);
        let b = Tensor::full([1, 1], 2.0);
        assert_eq!(interpolate(&a, &b, &[0.25]).unwrap().item(), 0.5);
        assert!(matches!(interpolate(&a, &b, &[1.5]), Err(Error::Contract(_))));
    }

    #[test]
    fn velocity_identity() {
        let mut rng = seeded(3);
        let x0 = Tensor::randn([5, 2], 1.0, &mut rng);
        let x1 = Tensor::randn([5, 2], 1.0, &mut rng);
        let v = velocity_target(&x0, &x1).unwrap();
        let t: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
        let xt = interpolate(&x0, &x1, &t).unwrap();
        for (i, ((xt, v), x1)) in xt.values().iter().zip(v.values()).zip(x1.values()).enumerate() {
            let back = xt + (1.0 - t[i / 2]) * v;
            assert!((back - x1).abs() < 1e-12);
        }
        assert_eq!(velocity_target(&x0, &x0).unwrap(), Tensor::zeros([5, 2]));
        let one = Tensor::full([1], 1.0);
        assert_eq!(velocity_target(&one, &Tensor::full([1], 4.0)).unwrap().item(), 3.0);
    }

    #[test]
    fn loss_cases() {
        let a = Tensor::from_vec(vec![0.0, 0.0]);
        let b = Tensor::from_vec(vec![1.0, 1.0]);
        assert_eq!(fm_loss(&a, &a).unwrap().item(), 0.0);
        assert_eq!(fm_loss(&a, &b).unwrap().item(), 1.0);
        let mut rng = seeded(4);
        let p = Tensor::randn([7, 3], 1.0, &mut rng);
        let q = Tensor::randn([7, 3], 1.0, &mut rng);
        let direct: f64 = p.values().iter().zip(q.values()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 21.0;
        assert!((fm_loss(&p, &q).unwrap().item() - direct).abs() < 1e-12);
    }

    #[test]
    fn sampler_validation_and_clamp() {
        assert!(TimestepSampler::new(TimestepDist::LogitNormal { mean: 0.0, std: 0.0 }, 1.0).is_err());
        assert!(TimestepSampler::new(TimestepDist::Uniform, 0.9).is_err());
        let s = TimestepSampler::new(TimestepDist::LogitNormal { mean: 0.0, std: 8.0 }, 1.0).unwrap();
        let mut rng = seeded(5);
        for _ in 0..10_000 {
            let t = s.sample(&mut rng);
            assert!((T_MIN..=1.0 - T_MIN).contains(&t));
        }
    }

    #[test]
    fn joint_mix_split() {
        assert_eq!(JointMix::default().split(12), (8, 4));
        assert_eq!(JointMix { images: 8, videos: 1 }.split(9), (8, 1));
        assert_eq!(JointMix { images: 0, videos: 1 }.split(5), (0, 5));
    }
}
