//! Encoder-swap experiment. A velocity model learns the latent
//! distribution of flat-colour 8×8 images under VAE `A`; the encoder is
//! then replaced by a differently seeded VAE `B` and training continues.
//! Quality is sliced W2 between decoded samples and data colours.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use vidgen_core::eval::eval_w2;
use vidgen_core::flowmatch::{train_step, FlowBatch, TimestepSampler};
use vidgen_core::nn::{MlpConfig, MlpVelocity, VelocityModel};
use vidgen_core::optim::Adam;
use vidgen_core::rng::{named, Rng};
use vidgen_core::sampler::{euler_sample, make_schedule};
use vidgen_core::vae::CausalVae;
use vidgen_core::video::{LatentVideo, PixelVideo, LATENT_CHANNELS, SPACE_STRIDE};
use vidgen_core::Tensor;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub encoder_a_seed: u64,
    /// Encoder `B` for panel seed `s` is seeded `encoder_b_seed + s`.
    pub encoder_b_seed: u64,
    pub colour: [f64; 3],
    pub colour_std: f64,
    pub hidden: usize,
    pub depth: usize,
    pub batch: usize,
    pub lr: f64,
    pub pretrain_steps: usize,
    pub checkpoints: Vec<usize>,
    pub eval_samples: usize,
    pub sample_steps: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            encoder_a_seed: 1000,
            encoder_b_seed: 2000,
            colour: [0.85, 0.15, 0.2],
            colour_std: 0.05,
            hidden: 64,
            depth: 3,
            batch: 128,
            lr: 2e-3,
            pretrain_steps: 1000,
            checkpoints: vec![0, 200, 800, 1600],
            eval_samples: 1000,
            sample_steps: 25,
        }
    }
}

impl AdaptConfig {
    pub fn mlp(&self) -> MlpConfig {
        MlpConfig { data_dim: LATENT_CHANNELS, hidden: self.hidden, depth: self.depth, ..MlpConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.checkpoints.is_empty() || self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Config("adapt checkpoints must be non-empty and strictly increasing".into()));
        }
        if self.batch == 0 || self.eval_samples == 0 || self.sample_steps == 0 {
            return Err(CliError::Config("adapt batch, eval_samples and sample_steps must be positive".into()));
        }
        Ok(())
    }

    fn colours(&self, n: usize, rng: &mut Rng) -> Tensor {
        let v: Vec<f64> = (0..3 * n)
            .map(|i| {
                let z: f64 = StandardNormal.sample(rng);
                (self.colour[i % 3] + self.colour_std * z).clamp(0.0, 1.0)
            })
            .collect();
        Tensor::new([n, 3], v).expect("colour batch")
    }
}

/// Encodes `[n, 3]` colours as flat 8×8 images tiled side by side, giving
/// one latent vector per image: `[n, 16]`.
pub fn encode_colours(vae: &CausalVae, colours: &Tensor) -> Result<Tensor> {
    let n = colours.shape()[0];
    let (s, w) = (SPACE_STRIDE, SPACE_STRIDE * n);
    let c = colours.values();
    let mut px = Vec::with_capacity(3 * s * w);
    for ch in 0..3 {
        for _ in 0..s {
            for x in 0..w {
                px.push(c[(x / s) * 3 + ch]);
            }
        }
    }
    let z = vae.encode(&PixelVideo::new(Tensor::new([1, 3, s, w], px)?)?)?.latent;
    // [1, 16, 1, n] -> [n, 16]
    Ok(z.reshape([LATENT_CHANNELS, n])?.transpose()?)
}

pub fn decode_colours(vae: &CausalVae, latents: &Tensor) -> Result<Tensor> {
    let n = latents.shape()[0];
    let z = latents.transpose()?.reshape([1, LATENT_CHANNELS, 1, n])?;
    let px = vae.decode(&LatentVideo::new(z)?)?.frames;
    let (s, w) = (SPACE_STRIDE, SPACE_STRIDE * n);
    let p = px.values();
    let v: Vec<f64> = (0..n).flat_map(|i| (0..3).map(move |ch| p[ch * s * w + i * s])).collect();
    Ok(Tensor::new([n, 3], v)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptPoint {
    pub step: usize,
    pub w2: f64,
}

pub struct Experiment<'a> {
    pub cfg: &'a AdaptConfig,
    eval_data: Tensor,
}

impl<'a> Experiment<'a> {
    pub fn new(cfg: &'a AdaptConfig) -> Result<Self> {
        cfg.validate()?;
        let eval_data = cfg.colours(cfg.eval_samples, &mut named(0, "adapt-eval-data"));
        Ok(Self { cfg, eval_data })
    }

    /// Sliced W2 of decoded samples against held-out colours.
    pub fn evaluate(&self, model: &MlpVelocity, vae: &CausalVae, seed: u64) -> Result<f64> {
        let n = self.cfg.eval_samples;
        let x0 = Tensor::randn([n, LATENT_CHANNELS], 1.0, &mut named(seed, "adapt-eval-noise"));
        let schedule = make_schedule(self.cfg.sample_steps, 1.0)?;
        let z = euler_sample(model, model.params().tensors(), &x0, &schedule, None, &Tensor::zeros([n, 0]), None)?;
        Ok(eval_w2(&decode_colours(vae, &z)?, &self.eval_data)?)
    }

    /// Trains `model` on images encoded by `vae` for `steps` steps.
    pub fn train(
        &self,
        model: &mut MlpVelocity,
        vae: &CausalVae,
        steps: usize,
        rng: &mut Rng,
        opt: &mut Adam,
        mut on_step: impl FnMut(usize, f64) -> Result<()>,
    ) -> Result<()> {
        let sampler = TimestepSampler::new(Default::default(), 1.0)?;
        let b = self.cfg.batch;
        for step in 0..steps {
            let x1 = encode_colours(vae, &self.cfg.colours(b, rng))?;
            let batch = FlowBatch::draw(x1, Tensor::zeros([b, 0]), &sampler, rng)?;
            on_step(step, train_step(model, &batch, opt)?)?;
        }
        Ok(())
    }

    pub fn pretrain(&self, seed: u64, on_step: impl FnMut(usize, f64) -> Result<()>) -> Result<MlpVelocity> {
        let mut model = MlpVelocity::new(self.cfg.mlp(), &mut named(seed, "adapt-init"))?;
        let vae = CausalVae::new(self.cfg.encoder_a_seed);
        let mut opt = Adam::new(self.cfg.lr);
        self.train(&mut model, &vae, self.cfg.pretrain_steps, &mut named(seed, "adapt-pretrain"), &mut opt, on_step)?;
        Ok(model)
    }

    /// Continues training `model` with `vae`, measuring at each checkpoint
    /// (step 0 is before any update).
    pub fn continue_with(
        &self,
        model: &MlpVelocity,
        vae: &CausalVae,
        seed: u64,
        mut on_step: impl FnMut(usize, f64) -> Result<()>,
    ) -> Result<Vec<AdaptPoint>> {
        let mut m = model.clone();
        let mut opt = Adam::new(self.cfg.lr);
        let mut rng = named(seed, "adapt-continue");
        let mut points = Vec::with_capacity(self.cfg.checkpoints.len());
        let mut done = 0;
        for &c in &self.cfg.checkpoints {
            self.train(&mut m, vae, c - done, &mut rng, &mut opt, |s, l| on_step(done + s + 1, l))?;
            done = c;
            points.push(AdaptPoint { step: c, w2: self.evaluate(&m, vae, seed)? });
        }
        Ok(points)
    }

    pub fn encoder_b(&self, seed: u64) -> CausalVae {
        CausalVae::new(self.cfg.encoder_b_seed.wrapping_add(seed))
    }
}

#[derive(Clone, Debug)]
pub struct AdaptReport {
    pub pre_swap: f64,
    pub swapped: Vec<AdaptPoint>,
    pub control: Vec<AdaptPoint>,
}

impl AdaptReport {
    pub fn at(&self, step: usize) -> Option<f64> {
        self.swapped.iter().find(|p| p.step == step).map(|p| p.w2)
    }

    /// Degradation at the swap and recovery by `within` steps.
    pub fn degrade_and_recover(&self, within: usize) -> (f64, f64) {
        let w0 = self.at(0).unwrap_or(f64::NAN);
        let later = self.at(within).unwrap_or(f64::NAN);
        (w0 / self.pre_swap, later / w0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;
    use vidgen_core::rng::seeded;

    fn uniform_colours(n: usize, rng: &mut Rng) -> Tensor {
        Tensor::new([n, 3], (0..3 * n).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn colours_round_trip_through_one_vae() {
        let vae = CausalVae::new(3);
        let c = uniform_colours(7, &mut seeded(1));
        let z = encode_colours(&vae, &c).unwrap();
        assert_eq!(z.shape(), &[7, 16]);
        assert!(decode_colours(&vae, &z).unwrap().max_abs_diff(&c) < 1e-12);
    }

    #[test]
    fn per_image_latents_are_independent() {
        let vae = CausalVae::new(4);
        let c = uniform_colours(3, &mut seeded(2));
        let alone = encode_colours(&vae, &c.narrow(0, 1, 1).unwrap()).unwrap();
        let tiled = encode_colours(&vae, &c).unwrap().narrow(0, 1, 1).unwrap();
        assert!(alone.max_abs_diff(&tiled) < 1e-15);
    }

    #[test]
    fn swapped_decoder_misreads_latents() {
        let (a, b) = (CausalVae::new(1000), CausalVae::new(2000));
        let c = uniform_colours(50, &mut seeded(3));
        let wrong = decode_colours(&b, &encode_colours(&a, &c).unwrap()).unwrap();
        assert!(wrong.max_abs_diff(&c) > 0.2);
    }

    #[test]
    fn checkpoints_must_increase() {
        let cfg = AdaptConfig { checkpoints: vec![0, 800, 200], ..AdaptConfig::default() };
        assert!(matches!(Experiment::new(&cfg), Err(CliError::Config(_))));
    }
}
