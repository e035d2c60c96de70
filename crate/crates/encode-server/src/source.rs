//! Where a trainer rank gets its batches: encoded in place, fetched from a
//! server, or read back from an offline spool of the same framed records.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use crate::client::Client;
use crate::error::{Error, Result};
use crate::protocol::{decode, encode, FeatureBatch, Message};
use crate::service::BatchService;

pub trait BatchSource: Send {
    fn fetch(&mut self, step: u64, rank: u32) -> Result<FeatureBatch>;
}

pub struct LocalSource(pub Arc<BatchService>);

impl BatchSource for LocalSource {
    fn fetch(&mut self, step: u64, rank: u32) -> Result<FeatureBatch> {
        Ok(self.0.batch(step, rank)?)
    }
}

pub struct RemoteSource(pub Client);

impl RemoteSource {
    pub fn connect(addr: impl std::net::ToSocketAddrs, timeout: Duration) -> Result<Self> {
        Ok(Self(Client::new(addr, timeout)?))
    }
}

impl BatchSource for RemoteSource {
    fn fetch(&mut self, step: u64, rank: u32) -> Result<FeatureBatch> {
        self.0.request_batch(step, rank)
    }
}

pub fn spool_path(dir: &Path, step: u64, rank: u32) -> PathBuf {
    dir.join(format!("step-{step:010}-rank-{rank:04}.cvfb"))
}

/// Writes one framed batch file per `(step, rank)` for `steps` across the
/// service's world. Returns the number of files written.
pub fn write_spool(service: &BatchService, dir: &Path, steps: std::ops::Range<u64>) -> Result<usize> {
    std::fs::create_dir_all(dir)?;
    let mut n = 0;
    for step in steps {
        for rank in 0..service.config().world_size {
            let b = service.batch(step, rank)?;
            std::fs::write(spool_path(dir, step, rank), encode(&Message::Batch(b)))?;
            n += 1;
        }
    }
    Ok(n)
}

pub struct SpoolSource {
    pub dir: PathBuf,
}

impl BatchSource for SpoolSource {
    fn fetch(&mut self, step: u64, rank: u32) -> Result<FeatureBatch> {
        let path = spool_path(&self.dir, step, rank);
        let bytes = std::fs::read(&path).map_err(|e| Error::Source(format!("{}: {e}", path.display())))?;
        match decode(&bytes)? {
            (Message::Batch(b), used) if used == bytes.len() && b.step == step && b.rank == rank => Ok(b),
            _ => Err(Error::Source(format!("{} does not hold batch ({step}, {rank})", path.display()))),
        }
    }
}
