//! Stateless batch composition: every `(step, rank)` maps to one batch as a
//! pure function of the seed and the dataset.

use std::sync::{Arc, OnceLock};

use rand::seq::SliceRandom;
use rand::Rng as _;
use vidgen_core::dit::TextEncoder;
use vidgen_core::rng::{mix, stream};
use vidgen_core::vae::CausalVae;
use vidgen_core::video::PixelVideo;
use vidgen_core::Tensor;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::protocol::{to_f32_grid, FeatureBatch};

#[derive(Clone, Debug, PartialEq)]
pub struct ServiceConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub world_size: u32,
    pub vae_seed: u64,
    pub text_dim: usize,
    pub text_seed: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { seed: 0, batch_size: 2, world_size: 2, vae_seed: 0, text_dim: 8, text_seed: 0 }
    }
}

/// Encoded sample: latent `[T', 16, H', W']` and text embedding, both on the f32 grid.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub latent: Tensor,
    pub text: Tensor,
}

pub struct BatchService {
    cfg: ServiceConfig,
    dataset: Arc<Dataset>,
    vae: CausalVae,
    text: TextEncoder,
    /// Buckets holding at least `world_size · batch_size` samples.
    eligible: Vec<u16>,
    cache: Vec<OnceLock<Encoded>>,
}

#[derive(Debug)]
pub enum ServiceError {
    UnknownRank(u32),
    NoBucket,
    Encode(Error),
}

impl BatchService {
    pub fn new(dataset: Arc<Dataset>, cfg: ServiceConfig) -> Result<Self> {
        if cfg.batch_size == 0 || cfg.world_size == 0 || cfg.text_dim == 0 {
            return Err(Error::Config("batch size, world size and text dim must be positive".into()));
        }
        let need = cfg.batch_size * cfg.world_size as usize;
        let eligible: Vec<u16> = dataset.buckets().iter().filter(|(_, ids)| ids.len() >= need).map(|(&b, _)| b).collect();
        let cache = (0..dataset.len()).map(|_| OnceLock::new()).collect();
        Ok(Self {
            vae: CausalVae::new(cfg.vae_seed),
            text: TextEncoder::new(cfg.text_dim, cfg.text_seed),
            cfg,
            dataset,
            eligible,
            cache,
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn eligible_buckets(&self) -> &[u16] {
        &self.eligible
    }

    /// Bucket for `(step, rank)`; each rank draws independently.
    pub fn choose_bucket(&self, step: u64, rank: u32) -> Option<u16> {
        if self.eligible.is_empty() {
            return None;
        }
        let mut rng = stream(self.cfg.seed, mix(&[step, rank as u64, 1]));
        Some(self.eligible[rng.random_range(0..self.eligible.len())])
    }

    /// Sample ids for `(step, rank)`: one permutation of the bucket per
    /// `(step, bucket)`, shared by all ranks, with rank `r` taking the
    /// `r`-th slice of `batch_size`.
    pub fn sample_ids(&self, step: u64, rank: u32) -> Result<(u16, Vec<u32>), ServiceError> {
        if rank >= self.cfg.world_size {
            return Err(ServiceError::UnknownRank(rank));
        }
        let bucket = self.choose_bucket(step, rank).ok_or(ServiceError::NoBucket)?;
        let mut ids = self.dataset.buckets()[&bucket].clone();
        ids.shuffle(&mut stream(self.cfg.seed, mix(&[step, bucket as u64, 2])));
        let b = self.cfg.batch_size;
        let r = rank as usize;
        Ok((bucket, ids[r * b..(r + 1) * b].to_vec()))
    }

    pub fn encode_sample(&self, id: u32) -> Result<&Encoded> {
        let slot = self.cache.get(id as usize).ok_or_else(|| Error::Contract(format!("sample {id} out of range")))?;
        if let Some(e) = slot.get() {
            return Ok(e);
        }
        let s = self.dataset.sample(id).expect("cache sized to dataset");
        let latent = self.vae.encode(&PixelVideo::try_from(&s.video)?)?.latent;
        let text = Tensor::from_vec(self.text.encode(&s.caption));
        Ok(slot.get_or_init(|| Encoded { latent: to_f32_grid(&latent), text: to_f32_grid(&text) }))
    }

    pub fn batch(&self, step: u64, rank: u32) -> Result<FeatureBatch, ServiceError> {
        let (bucket, sample_ids) = self.sample_ids(step, rank)?;
        let mut lat = Vec::with_capacity(sample_ids.len());
        let mut txt = Vec::with_capacity(sample_ids.len());
        for &id in &sample_ids {
            let e = self.encode_sample(id).map_err(ServiceError::Encode)?;
            let mut s = vec![1];
            s.extend_from_slice(e.latent.shape());
            lat.push(e.latent.reshape(s).map_err(|e| ServiceError::Encode(e.into()))?);
            txt.push(e.text.reshape([1, self.cfg.text_dim]).map_err(|e| ServiceError::Encode(e.into()))?);
        }
        let cat = |v: &[Tensor]| -> Result<Tensor, ServiceError> {
            let refs: Vec<&Tensor> = v.iter().collect();
            Tensor::concat(&refs, 0).map_err(|e| ServiceError::Encode(e.into()))
        };
        Ok(FeatureBatch { step, rank, bucket, latents: cat(&lat)?, text_emb: cat(&txt)?, sample_ids })
    }
}

impl std::fmt::Display for ServiceError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ServiceError::UnknownRank(r) => write!(f, "rank {r} outside the configured world"),
            ServiceError::NoBucket => write!(f, "no bucket holds a full step of samples"),
            ServiceError::Encode(e) => write!(f, "encode failed: {e}"),
        }
    }
}

impl ServiceError {
    pub fn code(&self) -> u16 {
        use crate::protocol::*;
        match self {
            ServiceError::UnknownRank(_) => ERR_UNKNOWN_RANK,
            ServiceError::NoBucket => ERR_UNKNOWN_BUCKET,
            ServiceError::Encode(_) => ERR_INTERNAL,
        }
    }
}

impl From<ServiceError> for Error {
    fn from(e: ServiceError) -> Self {
        Error::Server { code: e.code(), message: e.to_string() }
    }
}
