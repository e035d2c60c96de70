//! Miniature video diffusion transformer.

pub mod attention;
pub mod config;
pub mod model;
pub mod patch;
pub mod pos;
pub mod text;

pub use attention::{attention, attention_weights, attention_with, AttnOptions, QkNorm};
pub use config::{ModelConfig, Patch, PeMode};
pub use model::Dit;
pub use patch::{patchify, unpatchify, TokenGrid};
pub use pos::{apply_rope, build_ape, build_spatial_ape, rope_split};
pub use text::TextEncoder;
