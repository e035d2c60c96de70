//! Core of a desk-scale text-to-video flow-matching stack.
//!
//! Everything runs on the small [`tensor`] autodiff engine in `f64`. The
//! modules mirror the training pipeline: [`flowmatch`] (objective, timestep
//! sampling, flow shift), [`dit`] (3D diffusion transformer), [`vae`]
//! (block-causal video autoencoder), [`sampler`] (Euler ODE with guidance),
//! [`rlhf`] (reward fine-tuning through the sampler), [`parallel`]
//! (single-host sequence/data parallel simulations) and [`eval`].

pub mod checkpoint;
pub mod dit;
pub mod error;
pub mod eval;
pub mod flowmatch;
pub mod nn;
pub mod optim;
pub mod parallel;
pub mod rlhf;
pub mod rng;
pub mod sampler;
pub mod synth;
pub mod tensor;
pub mod vae;
pub mod video;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, TensorError};
