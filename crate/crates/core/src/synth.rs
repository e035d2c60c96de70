//! Procedural data: a 2D Gaussian mixture and small synthetic videos with
//! known structure (hard cuts, crossfades, camera pans, moving objects).

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::rng::{named, Rng};
use crate::tensor::Tensor;
use crate::video::RawVideo;

/// Equal-weight isotropic Gaussian mixture in 2D.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    pub centers: Vec<[f64; 2]>,
    pub std: f64,
}

impl GaussianMixture {
    /// Two modes at `(±2, 0)` with std 0.3.
    pub fn two_modes() -> Self {
        Self { centers: vec![[-2.0, 0.0], [2.0, 0.0]], std: 0.3 }
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Tensor {
        let mut v = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let c = self.centers[rng.random_range(0..self.centers.len())];
            for m in c {
                let z: f64 = StandardNormal.sample(rng);
                v.push(m + self.std * z);
            }
        }
        Tensor::new([n, 2], v).expect("mixture shape")
    }
}

fn solid(h: usize, w: usize, rgb: [f64; 3]) -> Vec<f64> {
    rgb.iter().flat_map(|&c| std::iter::repeat_n(c, h * w)).collect()
}

pub fn constant_video(frames: usize, h: usize, w: usize, rgb: [f64; 3]) -> RawVideo {
    RawVideo::from_frames(h, w, &vec![solid(h, w, rgb); frames]).expect("constant video")
}

/// Colour `a` before frame `at`, colour `b` from `at` on.
pub fn hard_cut(frames: usize, h: usize, w: usize, at: usize, a: [f64; 3], b: [f64; 3]) -> RawVideo {
    let f: Vec<Vec<f64>> = (0..frames).map(|i| solid(h, w, if i < at { a } else { b })).collect();
    RawVideo::from_frames(h, w, &f).expect("cut video")
}

/// Linear blend from `a` to `b` over `len` frames starting at `start`.
pub fn crossfade(frames: usize, h: usize, w: usize, start: usize, len: usize, a: [f64; 3], b: [f64; 3]) -> RawVideo {
    let f: Vec<Vec<f64>> = (0..frames)
        .map(|i| {
            let alpha = (i.saturating_sub(start) as f64 / len as f64).min(1.0);
            solid(h, w, [0, 1, 2].map(|c| (1.0 - alpha) * a[c] + alpha * b[c]))
        })
        .collect();
    RawVideo::from_frames(h, w, &f).expect("crossfade video")
}

/// Seeded random RGB texture, `[3, h, w]`, values in `[0.1, 0.9]`.
pub fn texture(h: usize, w: usize, seed: u64) -> Vec<f64> {
    let mut rng = named(seed, "texture");
    (0..3 * h * w).map(|_| rng.random_range(0.1..0.9)).collect()
}

/// Shifts a `[3, h, w]` image by `(dx, dy)` with wrap-around.
pub fn shift_wrap(img: &[f64], h: usize, w: usize, dx: isize, dy: isize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let sy = (y as isize - dy).rem_euclid(h as isize) as usize;
                let sx = (x as isize - dx).rem_euclid(w as isize) as usize;
                out[(c * h + y) * w + x] = img[(c * h + sy) * w + sx];
            }
        }
    }
    out
}

/// Textured background translating `(dx, dy)` pixels per frame.
pub fn camera_pan(frames: usize, h: usize, w: usize, dx: isize, dy: isize, seed: u64) -> RawVideo {
    let base = texture(h, w, seed);
    let f: Vec<Vec<f64>> =
        (0..frames).map(|i| shift_wrap(&base, h, w, dx * i as isize, dy * i as isize)).collect();
    RawVideo::from_frames(h, w, &f).expect("pan video")
}

/// Static textured background with a textured `size`×`size` square moving
/// `(dx, dy)` pixels per frame from `(x0, y0)`.
#[allow(clippy::too_many_arguments)]
pub fn moving_square(
    frames: usize,
    h: usize,
    w: usize,
    size: usize,
    (x0, y0): (usize, usize),
    (dx, dy): (isize, isize),
    seed: u64,
) -> RawVideo {
    let bg = texture(h, w, seed);
    let fg = texture(size, size, seed ^ 0xf00d);
    let f: Vec<Vec<f64>> = (0..frames)
        .map(|i| {
            let mut img = bg.clone();
            let ox = x0 as isize + dx * i as isize;
            let oy = y0 as isize + dy * i as isize;
            for c in 0..3 {
                for y in 0..size {
                    for x in 0..size {
                        let (px, py) = (ox + x as isize, oy + y as isize);
                        if px >= 0 && py >= 0 && (px as usize) < w && (py as usize) < h {
                            img[(c * h + py as usize) * w + px as usize] = fg[(c * size + y) * size + x];
                        }
                    }
                }
            }
            img
        })
        .collect();
    RawVideo::from_frames(h, w, &f).expect("moving square video")
}

/// Concatenates clips of equal frame size along time.
pub fn concat_videos(parts: &[RawVideo]) -> RawVideo {
    let (h, w) = (parts[0].height, parts[0].width);
    let data: Vec<f64> = parts
        .iter()
        .inspect(|p| assert_eq!((p.height, p.width), (h, w), "concat_videos size mismatch"))
        .flat_map(|p| p.data.iter().copied())
        .collect();
    let frames = parts.iter().map(|p| p.frames).sum();
    RawVideo::new(frames, h, w, data).expect("concat video")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn mixture_moments() {
        let x = GaussianMixture::two_modes().sample(4000, &mut seeded(1));
        let xs: Vec<f64> = x.values().chunks(2).map(|r| r[0]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let second = xs.iter().map(|v| v * v).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.15);
        assert!((second - (4.0 + 0.09)).abs() < 0.15);
    }

    #[test]
    fn fixtures_have_expected_structure() {
        let cut = hard_cut(10, 4, 4, 7, [0.0; 3], [1.0; 3]);
        assert_eq!(cut.frame(6)[0], 0.0);
        assert_eq!(cut.frame(7)[0], 1.0);
        let fade = crossfade(30, 2, 2, 5, 20, [0.0; 3], [1.0; 3]);
        assert!((fade.frame(15)[0] - 0.5).abs() < 1e-12);
        assert_eq!(fade.frame(29)[0], 1.0);
        let pan = camera_pan(3, 8, 8, 2, 0, 4);
        assert_eq!(pan.frame(1), &shift_wrap(pan.frame(0), 8, 8, 2, 0)[..]);
        let sq = moving_square(2, 16, 16, 4, (2, 2), (3, 0), 5);
        assert_ne!(sq.frame(0), sq.frame(1));
        assert_eq!(sq.frame(0)[15 * 16 + 15], sq.frame(1)[15 * 16 + 15]);
        assert_eq!(concat_videos(&[cut.clone(), cut]).frames, 20);
    }
}
