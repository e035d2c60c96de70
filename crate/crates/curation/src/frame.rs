//! Helpers over `[3, h, w]` RGB frames stored as flat slices.

use crate::error::{CurationError, Result};

pub fn luminance(frame: &[f64], h: usize, w: usize) -> Vec<f64> {
    let n = h * w;
    (0..n).map(|i| 0.299 * frame[i] + 0.587 * frame[n + i] + 0.114 * frame[2 * n + i]).collect()
}

pub(crate) fn check_frame(frame: &[f64], h: usize, w: usize) -> Result<()> {
    if frame.len() != 3 * h * w {
        return Err(CurationError::Shape(format!("frame of {} values is not 3×{h}×{w}", frame.len())));
    }
    Ok(())
}

/// Separable Gaussian blur with clamped borders, per channel.
pub fn gaussian_blur(frame: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return frame.to_vec();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut out = vec![0.0; frame.len()];
    let mut tmp = vec![0.0; h * w];
    for c in 0..3 {
        let plane = &frame[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = (-r..=r).map(|i| kernel[(i + r) as usize] * plane[y * w + clamp(x as isize + i, w)]).sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                out[c * h * w + y * w + x] =
                    (-r..=r).map(|i| kernel[(i + r) as usize] * tmp[clamp(y as isize + i, h) * w + x]).sum();
            }
        }
    }
    out
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub(crate) fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    mean(&v.iter().map(|x| (x - m) * (x - m)).collect::<Vec<_>>())
}
