//! Feature-encode service. Trainer ranks request pre-encoded latents and
//! text embeddings by `(step, rank)` over the `CVFB` framed protocol;
//! composition is a pure function of the seed, so any step can be replayed
//! against a restarted server or an offline spool.

pub mod buffer;
pub mod client;
pub mod dataset;
pub mod error;
pub mod protocol;
pub mod server;
pub mod service;
pub mod source;
pub mod trainer;

pub use buffer::{BatchBuffer, BufferConfig};
pub use client::Client;
pub use dataset::{bucket_from_id, bucket_id, toy_resolution, Dataset, Sample};
pub use error::{Error, Result};
pub use protocol::{decode, encode, FeatureBatch, Message, ProtocolError, ProtocolErrorKind};
pub use server::{Server, ServerOptions};
pub use service::{BatchService, ServiceConfig};
pub use source::{spool_path, write_spool, BatchSource, LocalSource, RemoteSource, SpoolSource};
pub use trainer::{toy_dit_config, FeatureTrainer};
