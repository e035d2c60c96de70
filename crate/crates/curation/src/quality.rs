//! Sharpness and aesthetic scoring.

use std::ops::Range;

use vidgen_core::video::RawVideo;

use crate::error::{CurationError, Result};
use crate::frame::{check_frame, luminance, variance};

/// Variance of the 3×3 Laplacian of the luminance over interior pixels.
pub fn laplacian_blur_score(frame: &[f64], h: usize, w: usize) -> Result<f64> {
    check_frame(frame, h, w)?;
    if h < 3 || w < 3 {
        return Err(CurationError::Contract(format!("blur score needs at least 3×3 pixels, got {h}×{w}")));
    }
    let y = luminance(frame, h, w);
    let mut lap = Vec::with_capacity((h - 2) * (w - 2));
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let at = |rr: usize, cc: usize| y[rr * w + cc];
            lap.push(at(r - 1, c) + at(r + 1, c) + at(r, c - 1) + at(r, c + 1) - 4.0 * at(r, c));
        }
    }
    Ok(variance(&lap))
}

/// Pluggable aesthetic model; the score only has to be comparable within
/// one run.
pub trait AestheticScorer: Send + Sync {
    fn score(&self, video: &RawVideo, span: Range<usize>) -> f64;
}

/// Deterministic stand-in: luminance contrast of the middle frame plus a
/// small log-sharpness term.
#[derive(Clone, Copy, Debug, Default)]
pub struct StubAesthetic;

impl AestheticScorer for StubAesthetic {
    fn score(&self, video: &RawVideo, span: Range<usize>) -> f64 {
        let mid = span.start + span.len() / 2;
        let (h, w) = (video.height, video.width);
        let frame = video.frame(mid);
        let contrast = variance(&luminance(frame, h, w)).sqrt();
        let sharp = laplacian_blur_score(frame, h, w).unwrap_or(0.0);
        contrast + 0.1 * sharp.ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::gaussian_blur;

    fn gray(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
        let plane: Vec<f64> = (0..h * w).map(|i| f(i / w, i % w)).collect();
        [plane.clone(), plane.clone(), plane].concat()
    }

    #[test]
    fn constant_frame_scores_zero() {
        assert_eq!(laplacian_blur_score(&gray(6, 6, |_, _| 0.4), 6, 6).unwrap(), 0.0);
        assert!(laplacian_blur_score(&gray(2, 6, |_, _| 0.4), 2, 6).is_err());
    }

    #[test]
    fn single_pixel_matches_hand_enumeration() {
        let f = gray(5, 5, |r, c| if (r, c) == (2, 2) { 1.0 } else { 0.0 });
        // interior Laplacian: centre -4, four edge neighbours +1, corners 0
        let vals = [0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0];
        let m = vals.iter().sum::<f64>() / 9.0;
        let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 9.0;
        let lum = 0.299 + 0.587 + 0.114;
        assert!((laplacian_blur_score(&f, 5, 5).unwrap() - var * lum * lum).abs() < 1e-12);
    }

    #[test]
    fn blur_lowers_score_monotonically() {
        let f = gray(16, 16, |r, c| ((r + c) % 2) as f64);
        let mut prev = laplacian_blur_score(&f, 16, 16).unwrap();
        for sigma in [0.5, 1.0, 2.0] {
            let s = laplacian_blur_score(&gaussian_blur(&f, 16, 16, sigma), 16, 16).unwrap();
            assert!(s < prev, "sigma {sigma}: {s} !< {prev}");
            prev = s;
        }
    }

    #[test]
    fn stub_prefers_contrast() {
        let flat = vidgen_core::synth::constant_video(3, 8, 8, [0.5; 3]);
        let busy = vidgen_core::synth::camera_pan(3, 8, 8, 1, 0, 1);
        assert!(StubAesthetic.score(&busy, 0..3) > StubAesthetic.score(&flat, 0..3));
    }
}
