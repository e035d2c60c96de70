//! Two-Gaussian toy: an MLP velocity field trained by flow matching and
//! scored by sliced W2 against fresh data.

use serde::{Deserialize, Serialize};
use vidgen_core::eval::eval_w2;
use vidgen_core::flowmatch::{train_step, FlowBatch, TimestepDist, TimestepSampler};
use vidgen_core::nn::{MlpConfig, MlpVelocity, VelocityModel};
use vidgen_core::optim::Adam;
use vidgen_core::rng::named;
use vidgen_core::sampler::{euler_sample, make_schedule, TraceRow};
use vidgen_core::synth::GaussianMixture;
use vidgen_core::Tensor;

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Toy2dConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub hidden: usize,
    pub depth: usize,
    pub centers: Vec<[f64; 2]>,
    pub std: f64,
    pub timesteps: TimestepDist,
    pub eval_samples: usize,
    pub sample_steps: usize,
    pub sample_shift: f64,
}

impl Default for Toy2dConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 256,
            lr: 3e-3,
            hidden: 64,
            depth: 3,
            centers: vec![[-1.0, 2.0], [1.0, 2.0]],
            std: 0.3,
            timesteps: TimestepDist::LogitNormal { mean: 0.0, std: 1.0 },
            eval_samples: 4000,
            sample_steps: 50,
            sample_shift: 1.0,
        }
    }
}

impl Toy2dConfig {
    pub fn mixture(&self) -> GaussianMixture {
        GaussianMixture { centers: self.centers.clone(), std: self.std }
    }

    pub fn mlp(&self) -> MlpConfig {
        MlpConfig { data_dim: 2, hidden: self.hidden, depth: self.depth, ..MlpConfig::default() }
    }
}

pub fn init_model(cfg: &Toy2dConfig, seed: u64) -> Result<MlpVelocity> {
    Ok(MlpVelocity::new(cfg.mlp(), &mut named(seed, "toy2d-init"))?)
}

/// Trains for `cfg.steps`, calling `on_step(step, loss)` after every step.
pub fn train(model: &mut MlpVelocity, cfg: &Toy2dConfig, seed: u64, mut on_step: impl FnMut(usize, f64) -> Result<()>) -> Result<()> {
    let data = cfg.mixture();
    let sampler = TimestepSampler::new(cfg.timesteps, 1.0)?;
    let mut opt = Adam::new(cfg.lr);
    let mut rng = named(seed, "toy2d-train");
    for step in 0..cfg.steps {
        let x1 = data.sample(cfg.batch, &mut rng);
        let batch = FlowBatch::draw(x1, Tensor::zeros([cfg.batch, 0]), &sampler, &mut rng)?;
        on_step(step, train_step(model, &batch, &mut opt)?)?;
    }
    Ok(())
}

/// `n` samples from Euler integration with `steps` steps at `shift`.
pub fn generate(model: &dyn VelocityModel, n: usize, steps: usize, shift: f64, seed: u64) -> Result<Tensor> {
    generate_traced(model, n, steps, shift, seed, None)
}

pub fn generate_traced(
    model: &dyn VelocityModel,
    n: usize,
    steps: usize,
    shift: f64,
    seed: u64,
    trace: Option<&mut Vec<TraceRow>>,
) -> Result<Tensor> {
    let x0 = Tensor::randn([n, 2], 1.0, &mut named(seed, "toy2d-noise"));
    let schedule = make_schedule(steps, shift)?;
    Ok(euler_sample(model, model.params().tensors(), &x0, &schedule, None, &Tensor::zeros([n, 0]), trace)?)
}

/// Sliced W2 between generated samples and a fresh data draw.
pub fn evaluate(model: &dyn VelocityModel, cfg: &Toy2dConfig, steps: usize, shift: f64, seed: u64) -> Result<f64> {
    let data = cfg.mixture().sample(cfg.eval_samples, &mut named(seed, "toy2d-eval-data"));
    Ok(eval_w2(&generate(model, cfg.eval_samples, steps, shift, seed)?, &data)?)
}
