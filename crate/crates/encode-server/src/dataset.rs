//! Clips conformed to their bucket's toy resolution and frame count.

use std::collections::BTreeMap;

use vidgen_core::synth::{camera_pan, moving_square};
use vidgen_core::video::RawVideo;
use vidgen_curation::{Aspect, ClipRecord, SourceVideo};

use crate::error::{Error, Result};

/// Frames per second after conforming: a `d`-second bucket holds `4d + 1` frames.
pub const TOY_FPS: usize = 4;
pub const MAX_DURATION_S: u32 = 8;

/// Toy `(height, width)` for each aspect, all multiples of 8.
pub fn toy_resolution(aspect: Aspect) -> (usize, usize) {
    match aspect {
        Aspect::Square => (32, 32),
        Aspect::W16H9 => (48, 80),
        Aspect::W9H16 => (80, 48),
        Aspect::W4H3 => (48, 64),
        Aspect::W3H4 => (64, 48),
        Aspect::W3H2 => (32, 48),
        Aspect::W2H3 => (48, 32),
    }
}

pub fn bucket_frames(duration_s: u32) -> usize {
    TOY_FPS * duration_s as usize + 1
}

/// `(aspect, duration)` packed as `aspect_index · 8 + duration − 1`.
pub fn bucket_id(aspect: Aspect, duration_s: u32) -> Result<u16> {
    if !(1..=MAX_DURATION_S).contains(&duration_s) {
        return Err(Error::Config(format!("bucket duration {duration_s}s outside 1..={MAX_DURATION_S}")));
    }
    let a = Aspect::ALL.iter().position(|&x| x == aspect).expect("aspect listed");
    Ok((a as u32 * MAX_DURATION_S + duration_s - 1) as u16)
}

pub fn bucket_from_id(id: u16) -> Option<(Aspect, u32)> {
    let a = *Aspect::ALL.get(id as usize / MAX_DURATION_S as usize)?;
    Some((a, id as u32 % MAX_DURATION_S + 1))
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub id: u32,
    pub bucket: u16,
    pub caption: String,
    /// `bucket_frames(d)` frames at `toy_resolution(aspect)`.
    pub video: RawVideo,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    samples: Vec<Sample>,
    by_bucket: BTreeMap<u16, Vec<u32>>,
}

const WORDS: [&str; 8] = ["red", "blue", "ocean", "forest", "city", "dog", "slow", "pan"];

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let mut by_bucket: BTreeMap<u16, Vec<u32>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            if s.id as usize != i {
                return Err(Error::Config(format!("sample {i} carries id {}", s.id)));
            }
            let (aspect, d) =
                bucket_from_id(s.bucket).ok_or_else(|| Error::Config(format!("sample {i}: unknown bucket {}", s.bucket)))?;
            let (h, w) = toy_resolution(aspect);
            if (s.video.frames, s.video.height, s.video.width) != (bucket_frames(d), h, w) {
                return Err(Error::Config(format!(
                    "sample {i}: {}×{}×{} video does not fit bucket {aspect:?}/{d}s",
                    s.video.frames, s.video.height, s.video.width
                )));
            }
            by_bucket.entry(s.bucket).or_default().push(s.id);
        }
        Ok(Self { samples, by_bucket })
    }

    /// `per_bucket` procedurally generated clips in each listed bucket.
    pub fn synthetic(buckets: &[(Aspect, u32)], per_bucket: usize, seed: u64) -> Result<Self> {
        let mut samples = Vec::new();
        for &(aspect, d) in buckets {
            let bucket = bucket_id(aspect, d)?;
            let (h, w) = toy_resolution(aspect);
            let frames = bucket_frames(d);
            for k in 0..per_bucket {
                let id = samples.len() as u32;
                let s = seed ^ (id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                let video = if k % 2 == 0 {
                    camera_pan(frames, h, w, 1 + (k as isize % 3), (k as isize % 2) - 1, s)
                } else {
                    moving_square(frames, h, w, 8, (k % (w - 8), k % (h - 8)), (1, 1), s)
                };
                let caption = format!("{} {} {}", WORDS[id as usize % 8], WORDS[(id as usize / 8 + 3) % 8], WORDS[k % 8]);
                samples.push(Sample { id, bucket, caption, video });
            }
        }
        Self::new(samples)
    }

    /// Kept, bucketed manifest records cut from their sources and conformed
    /// to the bucket: frames resampled uniformly over the truncated span,
    /// pixels resized by nearest neighbour.
    pub fn from_manifest(records: &[ClipRecord], corpus: &[SourceVideo]) -> Result<Self> {
        let mut samples = Vec::new();
        for r in records.iter().filter(|r| r.kept) {
            let Some(bucket) = r.bucket else { continue };
            let src = corpus
                .iter()
                .find(|s| s.id == r.source_id)
                .ok_or_else(|| Error::Config(format!("clip {}: source {:?} not in corpus", r.id, r.source_id)))?;
            let d = bucket.duration_s;
            let (h, w) = toy_resolution(bucket.aspect);
            let span_end = (r.start + (bucket.truncate_s * r.fps).round() as usize).clamp(r.start + 1, r.end);
            let video = conform(&src.video, r.start..span_end.min(src.video.frames), bucket_frames(d), h, w)?;
            samples.push(Sample {
                id: samples.len() as u32,
                bucket: bucket_id(bucket.aspect, d)?,
                caption: r.source_id.replace(['-', '_'], " "),
                video,
            });
        }
        Self::new(samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, id: u32) -> Option<&Sample> {
        self.samples.get(id as usize)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Bucket id → sample ids, both ascending.
    pub fn buckets(&self) -> &BTreeMap<u16, Vec<u32>> {
        &self.by_bucket
    }
}

fn conform(v: &RawVideo, span: std::ops::Range<usize>, frames: usize, h: usize, w: usize) -> Result<RawVideo> {
    if span.is_empty() {
        return Err(Error::Config("empty clip span".into()));
    }
    let mut data = Vec::with_capacity(frames * 3 * h * w);
    for f in 0..frames {
        let src_f = span.start + f * span.len() / frames;
        let img = v.frame(src_f);
        for c in 0..3 {
            for y in 0..h {
                let sy = y * v.height / h;
                for x in 0..w {
                    data.push(img[(c * v.height + sy) * v.width + x * v.width / w]);
                }
            }
        }
    }
    Ok(RawVideo::new(frames, h, w, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bucket_ids_round_trip() {
        for a in Aspect::ALL {
            for d in 1..=MAX_DURATION_S {
                assert_eq!(bucket_from_id(bucket_id(a, d).unwrap()), Some((a, d)));
            }
        }
        assert!(bucket_id(Aspect::Square, 0).is_err());
        assert_eq!(bucket_from_id(56), None);
    }

    #[test]
    fn resolutions_match_aspect() {
        for a in Aspect::ALL {
            let (h, w) = toy_resolution(a);
            assert_eq!(h % 8 + w % 8, 0);
            assert_eq!(Aspect::nearest(w, h), a);
        }
    }

    #[test]
    fn synthetic_groups_by_bucket() {
        let ds = Dataset::synthetic(&[(Aspect::Square, 1), (Aspect::W16H9, 2)], 3, 4).unwrap();
        assert_eq!(ds.len(), 6);
        let b: Vec<_> = ds.buckets().values().cloned().collect();
        assert_eq!(b, vec![vec![3, 4, 5], vec![0, 1, 2]]);
        assert_eq!(ds.sample(4).unwrap().video.frames, 9);
    }

    #[test]
    fn conform_resamples_time_and_space() {
        let v = RawVideo::new(10, 2, 2, (0..120).map(|i| i as f64).collect()).unwrap();
        let c = conform(&v, 2..6, 2, 4, 4).unwrap();
        // frames 2 and 4, each pixel doubled
        assert_eq!(c.frame(0)[0], v.frame(2)[0]);
        assert_eq!(c.frame(0)[1], v.frame(2)[0]);
        assert_eq!(c.frame(0)[2], v.frame(2)[1]);
        assert_eq!(c.frame(1)[0], v.frame(4)[0]);
    }
}
