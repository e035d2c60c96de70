//! Run configuration: a TOML file with sections, unknown keys rejected.
//!
//! ```toml
//! [run]
//! preset = "stage1"
//! seed = 7
//! steps = 50
//!
//! [sampler]
//! steps = 50
//! shift = 17.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vidgen_core::dit::{ModelConfig, Patch};
use vidgen_core::rlhf::RlhfConfig;

use crate::adapt::AdaptConfig;
use crate::error::{file_err, CliError, Result};
use crate::toy2d::Toy2dConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    VaeAdapt,
    Stage1,
    Stage2,
    Stage3,
    Sft,
    Rlhf,
}

/// Toy-scale row of the stage table. Pixel extents are the paper's divided
/// by 18 (then rounded to a multiple of 16 so the latent grid divides by the
/// 2×2 patch); batch sizes are the paper's divided by 64.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StagePreset {
    pub name: &'static str,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub image_batch: usize,
    pub video_batch: usize,
    pub lr: f64,
    pub steps: usize,
}

pub const PRETRAIN_LR: f64 = 1e-4;

impl Preset {
    pub const ALL: [Preset; 6] = [Preset::VaeAdapt, Preset::Stage1, Preset::Stage2, Preset::Stage3, Preset::Sft, Preset::Rlhf];

    pub fn stage(self) -> StagePreset {
        let (name, frames, height, width, image_batch, video_batch, lr, steps) = match self {
            Preset::VaeAdapt => ("vae-adapt", 1, 16, 16, 64, 0, PRETRAIN_LR, 50),
            Preset::Stage1 => ("stage1", 29, 16, 16, 64, 32, PRETRAIN_LR, 400),
            Preset::Stage2 => ("stage2", 125, 16, 16, 64, 8, PRETRAIN_LR, 600),
            Preset::Stage3 => ("stage3", 125, 48, 80, 32, 4, 5e-5, 300),
            Preset::Sft => ("sft", 125, 48, 80, 0, 4, 0.1 * PRETRAIN_LR, 50),
            // reward tuning samples the shortened 29-frame clips; its rate
            // is the [rlhf] section's
            Preset::Rlhf => ("rlhf", 29, 48, 80, 0, 4, RlhfConfig::default().lr, 50),
        };
        StagePreset { name, frames, height, width, image_batch, video_batch, lr, steps }
    }

    /// The pretraining progression, in order.
    pub fn progression() -> [Preset; 5] {
        [Preset::VaeAdapt, Preset::Stage1, Preset::Stage2, Preset::Stage3, Preset::Sft]
    }
}

/// Text embedding width shared by the toy video models.
pub const TEXT_DIM: usize = 8;

pub fn toy_video_model() -> ModelConfig {
    ModelConfig {
        patch: Patch::DEFAULT,
        layers: 2,
        heads: 2,
        head_dim: 8,
        ffn_dim: 32,
        cond_dim: TEXT_DIM,
        max_grid: [32, 8, 8],
        ..ModelConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub preset: Preset,
    pub seed: u64,
    /// Overrides the preset's step count.
    pub steps: Option<usize>,
    /// Overrides the preset's learning rate.
    pub lr: Option<f64>,
    pub log_every: usize,
    /// Checkpoint to start from.
    pub init: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { preset: Preset::Stage1, seed: 0, steps: None, lr: None, log_every: 10, init: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub steps: usize,
    pub shift: f64,
    pub cfg_scale: f64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self { steps: 50, shift: 17.0, cfg_scale: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Clips generated for video presets.
    pub pool: usize,
    pub vae_seed: u64,
    pub text_seed: u64,
    /// Weight of the pull toward the initial model (SFT).
    pub anchor_weight: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { pool: 16, vae_seed: 0, text_seed: 0, anchor_weight: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub model: ModelConfig,
    pub sampler: SamplerSection,
    pub data: DataSection,
    pub toy2d: Toy2dConfig,
    pub adapt: AdaptConfig,
    pub rlhf: RlhfConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run: RunSection::default(),
            model: toy_video_model(),
            sampler: SamplerSection::default(),
            data: DataSection::default(),
            toy2d: Toy2dConfig::default(),
            adapt: AdaptConfig::default(),
            rlhf: RlhfConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(file_err(path))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn stage(&self) -> StagePreset {
        let mut s = self.run.preset.stage();
        if let Some(n) = self.run.steps {
            s.steps = n;
        }
        if let Some(lr) = self.run.lr {
            s.lr = lr;
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn progression_grows_duration_then_resolution() {
        let stages: Vec<StagePreset> = Preset::progression().iter().map(|p| p.stage()).collect();
        let mut res_grew = false;
        for w in stages.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            assert!(b.frames >= a.frames && b.height * b.width >= a.height * a.width, "{} -> {}", a.name, b.name);
            if b.height * b.width > a.height * a.width {
                res_grew = true;
            }
            if b.frames > a.frames {
                assert!(!res_grew, "duration grew after resolution at {}", b.name);
            }
        }
        assert!(res_grew);
    }

    #[test]
    fn shapes_fit_the_latent_contract() {
        for p in Preset::ALL {
            let s = p.stage();
            assert_eq!((s.frames - 1) % 4, 0, "{}", s.name);
            assert_eq!(s.height % 16 + s.width % 16, 0, "{}", s.name);
            assert!(s.image_batch + s.video_batch > 0);
        }
    }

    #[test]
    fn batch_ratios_follow_the_table() {
        // images:videos 4096:2048, 4096:512, 2048:256
        let r = |p: Preset| p.stage().image_batch as f64 / p.stage().video_batch as f64;
        assert_eq!(r(Preset::Stage1), 2.0);
        assert_eq!(r(Preset::Stage2), 8.0);
        assert_eq!(r(Preset::Stage3), 8.0);
    }

    #[test]
    fn sft_uses_a_tenth_of_the_pretrain_rate() {
        assert!((Preset::Sft.stage().lr - 0.1 * Preset::Stage1.stage().lr).abs() < 1e-20);
        assert_eq!(Preset::Stage3.stage().lr, 5e-5);
    }

    #[test]
    fn unknown_keys_fail_fast() {
        assert!(RunConfig::parse("[run]\nseed = 3\n").is_ok());
        assert!(matches!(RunConfig::parse("[run]\nsede = 3\n"), Err(CliError::Config(_))));
        assert!(RunConfig::parse("[nope]\n").is_err());
        assert!(RunConfig::parse("[model]\nlayers = 1\nwidth = 3\n").is_err());
        let c = RunConfig::parse("[run]\npreset = \"stage2\"\nsteps = 5\n[model]\nlayers = 1\n").unwrap();
        assert_eq!(c.stage().steps, 5);
        assert_eq!(c.stage().frames, 125);
        assert_eq!(c.model.layers, 1);
        assert_eq!(c.model.heads, 4);
    }
}
