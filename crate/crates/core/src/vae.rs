//! Fixed, seeded, block-causal video autoencoder.
//!
//! Latent frame 0 sees only pixel frame 0; latent frame `j ≥ 1` sees only
//! pixel frames `4(j-1)+1 ..= 4j`. Each window is averaged in time, pooled
//! 8×8 in space and lifted 3→16 channels by `A (rgb - 0.5)` where `A` has
//! orthogonal columns. Decoding applies the pseudo-inverse, upsamples and
//! repeats each latent frame over its window, so constant videos round-trip.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::named;
use crate::tensor::Tensor;
use crate::video::{LatentVideo, PixelVideo, LATENT_CHANNELS, SPACE_STRIDE, TIME_STRIDE};

const LIFT_GAIN: f64 = 2.0;

#[derive(Debug)]
pub struct CausalVae {
    seed: u64,
    /// `[16, 3]`
    lift: Tensor,
    /// `[3, 16]`, left inverse of `lift`
    unlift: Tensor,
    touched: AtomicUsize,
}

impl Clone for CausalVae {
    fn clone(&self) -> Self {
        Self::new(self.seed)
    }
}

/// Pixel frames read by latent frame `j`.
pub fn causal_window(j: usize) -> std::ops::Range<usize> {
    if j == 0 {
        0..1
    } else {
        TIME_STRIDE * (j - 1) + 1..TIME_STRIDE * j + 1
    }
}

impl CausalVae {
    pub fn new(seed: u64) -> Self {
        let mut rng = named(seed, "vae-lift");
        // Gram-Schmidt on three Gaussian 16-vectors
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(3);
        while cols.len() < 3 {
            let mut v: Vec<f64> = (0..LATENT_CHANNELS).map(|_| StandardNormal.sample(&mut rng)).collect();
            for c in &cols {
                let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
            }
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n > 1e-6 {
                cols.push(v.into_iter().map(|a| a / n).collect());
            }
        }
        let lift: Vec<f64> =
            (0..LATENT_CHANNELS).flat_map(|r| cols.iter().map(move |c| LIFT_GAIN * c[r])).collect();
        let unlift: Vec<f64> = cols.iter().flat_map(|c| c.iter().map(|v| v / LIFT_GAIN)).collect();
        Self {
            seed,
            lift: Tensor::new([LATENT_CHANNELS, 3], lift).expect("lift shape"),
            unlift: Tensor::new([3, LATENT_CHANNELS], unlift).expect("unlift shape"),
            touched: AtomicUsize::new(0),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Latent frames read by the most recent decode call.
    pub fn last_touched_frames(&self) -> usize {
        self.touched.load(Ordering::Relaxed)
    }

    pub fn encode(&self, video: &PixelVideo) -> Result<LatentVideo> {
        let frames = &video.frames;
        let [tl, _, hl, wl] = video.latent_shape();
        let mut parts = Vec::with_capacity(tl);
        for j in 0..tl {
            let w = causal_window(j);
            let rgb = frames.narrow(0, w.start, w.len())?.mean_axis(0)?.avg_pool2d(SPACE_STRIDE, SPACE_STRIDE)?;
            let z = self.lift.matmul(&rgb.add_scalar(-0.5).reshape([3, hl * wl])?)?;
            parts.push(z.reshape([1, LATENT_CHANNELS, hl, wl])?);
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        LatentVideo::new(Tensor::concat(&refs, 0)?)
    }

    /// Decodes one latent frame `[16, h, w]` to pixels `[3, 8h, 8w]`.
    fn decode_frame(&self, z: &Tensor) -> Result<Tensor> {
        let s = z.shape();
        if s.len() != 3 || s[0] != LATENT_CHANNELS {
            return Err(Error::Shape(format!("latent frame must be [16, h, w], got {s:?}")));
        }
        let (h, w) = (s[1], s[2]);
        let rgb = self.unlift.matmul(&z.reshape([LATENT_CHANNELS, h * w])?)?.add_scalar(0.5).reshape([3, h, w])?;
        Ok(rgb.upsample2d(SPACE_STRIDE, SPACE_STRIDE)?.clamp(0.0, 1.0))
    }

    pub fn decode(&self, latent: &LatentVideo) -> Result<PixelVideo> {
        let z = &latent.latent;
        let tl = latent.num_frames();
        let mut frames = Vec::with_capacity(latent.pixel_frames());
        for j in 0..tl {
            let s = z.shape();
            let px = self.decode_frame(&z.narrow(0, j, 1)?.reshape([s[1], s[2], s[3]])?)?;
            let ps = px.shape().to_vec();
            let px = px.reshape([1, ps[0], ps[1], ps[2]])?;
            for _ in causal_window(j) {
                frames.push(px.clone());
            }
        }
        self.touched.store(tl, Ordering::Relaxed);
        let refs: Vec<&Tensor> = frames.iter().collect();
        PixelVideo::new(Tensor::concat(&refs, 0)?)
    }

    /// Frame 0 of `decode(latent)`, reading only latent frame 0.
    pub fn decode_first_frame(&self, latent: &Tensor) -> Result<Tensor> {
        let s = latent.shape();
        if s.len() != 4 || s[1] != LATENT_CHANNELS {
            return Err(Error::Shape(format!("latent must be [T', 16, H', W'], got {s:?}")));
        }
        let first = latent.narrow(0, 0, 1)?.reshape([s[1], s[2], s[3]])?;
        self.touched.store(1, Ordering::Relaxed);
        self.decode_frame(&first)
    }
}
