use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeMode {
    /// Additive absolute embedding (spatial 2D + temporal).
    Ape,
    /// 3D rotary embedding applied to queries and keys.
    Rope,
}

/// Patch extents along (time, height, width).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Patch {
    pub const DEFAULT: Patch = Patch { t: 1, h: 2, w: 2 };

    pub fn volume(&self) -> usize {
        self.t * self.h * self.w
    }
}

impl Default for Patch {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Transformer shape. Production proportions are 38 layers, 38 heads of
/// width 64 and a 9728-wide FFN; the default here is the toy scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub patch: Patch,
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub pe_mode: PeMode,
    /// Learn the APE tables instead of freezing the sinusoidal ones.
    pub learned_ape: bool,
    pub latent_channels: usize,
    pub cond_dim: usize,
    /// Largest latent grid (frames, rows, cols) the learned APE tables cover.
    pub max_grid: [usize; 3],
    pub qk_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch: Patch::DEFAULT,
            layers: 4,
            heads: 4,
            head_dim: 16,
            ffn_dim: 256,
            pe_mode: PeMode::Ape,
            learned_ape: false,
            latent_channels: 16,
            cond_dim: 32,
            max_grid: [32, 16, 16],
            qk_eps: 1e-6,
        }
    }
}

impl ModelConfig {
    pub fn hidden(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Raw token width before the input projection.
    pub fn patch_dim(&self) -> usize {
        self.latent_channels * self.patch.volume()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.head_dim == 0 || self.ffn_dim == 0 {
            return Err(config("layers, heads, head_dim and ffn_dim must be positive"));
        }
        if self.patch.volume() == 0 || self.latent_channels == 0 {
            return Err(config("patch extents and latent channels must be positive"));
        }
        if !self.hidden().is_multiple_of(4) {
            return Err(config(format!("hidden width {} must be divisible by 4 for the APE tables", self.hidden())));
        }
        if self.pe_mode == PeMode::Rope {
            super::pos::rope_split(self.head_dim)?;
        }
        Ok(())
    }
}
