//! Aspect-ratio and duration buckets.

use serde::{Deserialize, Serialize};

use crate::error::{CurationError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Aspect {
    #[serde(rename = "16:9")]
    W16H9,
    #[serde(rename = "3:2")]
    W3H2,
    #[serde(rename = "4:3")]
    W4H3,
    #[serde(rename = "1:1")]
    Square,
    #[serde(rename = "3:4")]
    W3H4,
    #[serde(rename = "2:3")]
    W2H3,
    #[serde(rename = "9:16")]
    W9H16,
}

impl Aspect {
    pub const ALL: [Aspect; 7] =
        [Aspect::W16H9, Aspect::W3H2, Aspect::W4H3, Aspect::Square, Aspect::W3H4, Aspect::W2H3, Aspect::W9H16];

    /// Width over height.
    pub fn ratio(self) -> f64 {
        match self {
            Aspect::W16H9 => 16.0 / 9.0,
            Aspect::W3H2 => 1.5,
            Aspect::W4H3 => 4.0 / 3.0,
            Aspect::Square => 1.0,
            Aspect::W3H4 => 0.75,
            Aspect::W2H3 => 2.0 / 3.0,
            Aspect::W9H16 => 9.0 / 16.0,
        }
    }

    /// Closest bucket in log ratio; ties go to the wider bucket.
    pub fn nearest(width: usize, height: usize) -> Aspect {
        let r = (width as f64 / height as f64).ln();
        let mut best = (f64::INFINITY, Aspect::Square);
        for a in Aspect::ALL {
            let d = (a.ratio().ln() - r).abs();
            if d < best.0 - 1e-12 {
                best = (d, a);
            }
        }
        best.1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BucketConfig {
    pub min_duration_s: u32,
    pub max_duration_s: u32,
    /// Batch size of a one-second bucket; longer buckets divide it.
    pub base_batch: usize,
}

impl Default for BucketConfig {
    fn default() -> Self {
        Self { min_duration_s: 1, max_duration_s: 8, base_batch: 32 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub aspect: Aspect,
    pub duration_s: u32,
    pub max_batch: usize,
    /// Seconds kept from the clip start.
    pub truncate_s: f64,
}

pub fn assign_bucket(width: usize, height: usize, duration_s: f64, cfg: &BucketConfig) -> Result<Bucket> {
    if width == 0 || height == 0 || !(duration_s > 0.0) {
        return Err(CurationError::Contract(format!("cannot bucket a {width}×{height} clip of {duration_s} s")));
    }
    if cfg.min_duration_s == 0 || cfg.min_duration_s > cfg.max_duration_s {
        return Err(CurationError::Config("bucket durations must satisfy 1 <= min <= max".into()));
    }
    let d = (duration_s.floor() as u32).clamp(cfg.min_duration_s, cfg.max_duration_s);
    Ok(Bucket {
        aspect: Aspect::nearest(width, height),
        duration_s: d,
        max_batch: (cfg.base_batch / d as usize).max(1),
        truncate_s: duration_s.min(d as f64),
    })
}
