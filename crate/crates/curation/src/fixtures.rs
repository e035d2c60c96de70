//! Small synthetic corpus with known structure: pans, a moving object, a
//! hard cut, a blurred pan, a crossfade and an exact duplicate source.

use vidgen_core::synth::{shift_wrap, texture};
use vidgen_core::video::RawVideo;

use crate::frame::gaussian_blur;
use crate::pipeline::SourceVideo;

pub const FIXTURE_FPS: f64 = 10.0;

/// Texture over a tinted horizontal colour wave, `[3, h, w]`.
pub fn tinted(h: usize, w: usize, tint: [f64; 3], phase: f64, seed: u64) -> Vec<f64> {
    grained(h, w, tint, phase, 0.35, seed)
}

/// As [`tinted`] with texture weight `grain`.
pub fn grained(h: usize, w: usize, tint: [f64; 3], phase: f64, grain: f64, seed: u64) -> Vec<f64> {
    let tex = texture(h, w, seed);
    let mut out = vec![0.0; 3 * h * w];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let wave = 0.5 + 0.5 * (std::f64::consts::TAU * x as f64 / w as f64 + phase).sin();
                let i = (c * h + y) * w + x;
                out[i] = grain * tex[i] + (1.0 - grain) * tint[c] * wave;
            }
        }
    }
    out
}

fn pan(frames: usize, base: &[f64], h: usize, w: usize, dx: isize, dy: isize) -> Vec<Vec<f64>> {
    (0..frames).map(|i| shift_wrap(base, h, w, dx * i as isize, dy * i as isize)).collect()
}

fn still(frames: usize, base: &[f64]) -> Vec<Vec<f64>> {
    vec![base.to_vec(); frames]
}

fn video(h: usize, w: usize, frames: Vec<Vec<f64>>) -> RawVideo {
    RawVideo::from_frames(h, w, &frames).expect("fixture video")
}

fn moving_object(frames: usize, h: usize, w: usize, speed: isize) -> Vec<Vec<f64>> {
    let bg = tinted(h, w, [0.3, 0.8, 0.4], 1.0, 21);
    let fg = texture(16, 16, 22);
    (0..frames)
        .map(|i| {
            let mut img = bg.clone();
            let ox = 4 + speed * i as isize;
            for c in 0..3 {
                for y in 0..16 {
                    for x in 0..16 {
                        let px = ox + x as isize;
                        if (0..w as isize).contains(&px) {
                            img[(c * h + 24 + y) * w + px as usize] = fg[(c * 16 + y) * 16 + x];
                        }
                    }
                }
            }
            img
        })
        .collect()
}

pub fn fixture_corpus() -> Vec<SourceVideo> {
    let src = |id: &str, video: RawVideo| SourceVideo { id: id.into(), fps: FIXTURE_FPS, video };
    let square = video(64, 64, moving_object(50, 64, 64, 1));
    let cut = {
        let a = grained(64, 96, [0.9, 0.3, 0.2], 0.0, 0.15, 31);
        let b = grained(64, 96, [0.2, 0.4, 0.9], 2.0, 0.15, 32);
        let mut f = still(40, &a);
        f.extend(pan(45, &b, 64, 96, 0, 2));
        video(64, 96, f)
    };
    let blurry = {
        let base = gaussian_blur(&tinted(96, 64, [0.6, 0.6, 0.2], 0.5, 41), 96, 64, 3.0);
        video(96, 64, pan(40, &base, 96, 64, 1, 1))
    };
    let fade = {
        let a = tinted(64, 64, [0.8, 0.8, 0.8], 0.0, 51);
        let b = tinted(64, 64, [0.1, 0.5, 0.7], 3.0, 52);
        let f = (0..60usize)
            .map(|i| {
                let t = (i.saturating_sub(20usize) as f64 / 20.0).min(1.0);
                a.iter().zip(&b).map(|(x, y)| (1.0 - t) * x + t * y).collect()
            })
            .collect();
        video(64, 64, f)
    };
    vec![
        src("pan-a", video(64, 112, pan(90, &tinted(64, 112, [1.0, 0.6, 0.3], 0.0, 11), 64, 112, 2, 0))),
        src("square-b", square.clone()),
        src("cuts-c", cut),
        src("blurry-d", blurry),
        src("fade-e", fade),
        src("square-copy-f", square),
    ]
}
