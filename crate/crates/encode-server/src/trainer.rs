//! Minimal flow-matching trainer fed by [`FeatureBatch`]es, used to check
//! that every batch source yields the same training run.

use vidgen_core::dit::{Dit, ModelConfig, Patch};
use vidgen_core::flowmatch::{train_step, FlowBatch, TimestepSampler};
use vidgen_core::optim::Adam;
use vidgen_core::rng::{mix, stream};

use crate::error::Result;
use crate::protocol::FeatureBatch;

pub fn toy_dit_config(text_dim: usize) -> ModelConfig {
    ModelConfig {
        patch: Patch { t: 1, h: 2, w: 2 },
        layers: 1,
        heads: 2,
        head_dim: 6,
        ffn_dim: 24,
        cond_dim: text_dim,
        max_grid: [16, 16, 16],
        ..ModelConfig::default()
    }
}

pub struct FeatureTrainer {
    pub model: Dit,
    opt: Adam,
    sampler: TimestepSampler,
    seed: u64,
}

impl FeatureTrainer {
    pub fn new(cfg: ModelConfig, seed: u64, lr: f64) -> Result<Self> {
        Ok(Self { model: Dit::new(cfg, seed)?, opt: Adam::new(lr), sampler: TimestepSampler::uniform(), seed })
    }

    /// One optimizer step; noise and timesteps depend only on `(seed, step, rank)`.
    pub fn step(&mut self, batch: &FeatureBatch) -> Result<f64> {
        let mut rng = stream(self.seed, mix(&[batch.step, batch.rank as u64, 3]));
        let fb = FlowBatch::draw(batch.latents.clone(), batch.text_emb.clone(), &self.sampler, &mut rng)?;
        Ok(train_step(&mut self.model, &fb, &mut self.opt)?)
    }
}
