//! Cheap deterministic clip embeddings: pooled colour layout through a fixed
//! random projection.

use std::ops::Range;

use rand_distr::{Distribution, StandardNormal};
use vidgen_core::rng::named;
use vidgen_core::video::RawVideo;

pub struct FrameEmbedder {
    pub grid: usize,
    pub dim: usize,
    /// `[3·grid², dim]`
    projection: Vec<f64>,
}

impl FrameEmbedder {
    pub fn new(grid: usize, dim: usize, seed: u64) -> Self {
        let mut rng = named(seed, "frame-embedder");
        let n = 3 * grid * grid;
        let projection = (0..n * dim).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>();
        let scale = 1.0 / (n as f64).sqrt();
        Self { grid, dim, projection: projection.into_iter().map(|v: f64| v * scale).collect() }
    }

    /// Mean-centred `grid`×`grid` average pool of each channel.
    fn pooled(&self, frame: &[f64], h: usize, w: usize) -> Vec<f64> {
        let g = self.grid;
        let mut out = vec![0.0; 3 * g * g];
        for c in 0..3 {
            for gy in 0..g {
                for gx in 0..g {
                    let (y0, y1) = (gy * h / g, ((gy + 1) * h / g).max(gy * h / g + 1).min(h));
                    let (x0, x1) = (gx * w / g, ((gx + 1) * w / g).max(gx * w / g + 1).min(w));
                    let mut s = 0.0;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            s += frame[(c * h + y) * w + x];
                        }
                    }
                    out[(c * g + gy) * g + gx] = s / ((y1 - y0) * (x1 - x0)) as f64 - 0.5;
                }
            }
        }
        out
    }

    /// Unit-norm embedding of `span`, averaging every `stride`-th frame.
    pub fn embed(&self, video: &RawVideo, span: Range<usize>, stride: usize) -> Vec<f64> {
        let n = 3 * self.grid * self.grid;
        let mut acc = vec![0.0; n];
        let mut count = 0;
        for f in span.step_by(stride.max(1)) {
            for (a, p) in acc.iter_mut().zip(self.pooled(video.frame(f), video.height, video.width)) {
                *a += p;
            }
            count += 1;
        }
        let mut e = vec![0.0; self.dim];
        for (i, a) in acc.iter().enumerate() {
            let a = a / count.max(1) as f64;
            for (j, ej) in e.iter_mut().enumerate() {
                *ej += a * self.projection[i * self.dim + j];
            }
        }
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            e.iter_mut().for_each(|v| *v /= norm);
        }
        e
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dedup::cosine;
    use vidgen_core::synth::constant_video;

    #[test]
    fn identical_content_embeds_identically() {
        let e = FrameEmbedder::new(4, 16, 0);
        let a = constant_video(4, 16, 16, [0.9, 0.2, 0.1]);
        let b = constant_video(4, 16, 16, [0.1, 0.2, 0.9]);
        let ea = e.embed(&a, 0..4, 1);
        assert_eq!(ea.len(), 16);
        assert!((ea.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((cosine(&ea, &e.embed(&a, 1..3, 1)) - 1.0).abs() < 1e-12);
        assert!(cosine(&ea, &e.embed(&b, 0..4, 1)) < 0.9);
    }
}
