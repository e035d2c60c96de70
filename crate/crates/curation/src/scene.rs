//! Shot boundary detection and fixed-length clip splitting.

use std::ops::Range;

use vidgen_core::video::RawVideo;

/// Mean over pixels of the RGB Euclidean distance between two frames.
pub fn frame_difference(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let n = h * w;
    let total: f64 = (0..n)
        .map(|i| (0..3).map(|c| (a[c * n + i] - b[c * n + i]).powi(2)).sum::<f64>().sqrt())
        .sum();
    total / n as f64
}

/// `d[i]` compares frames `i` and `i + 1`.
pub fn frame_differences(video: &RawVideo) -> Vec<f64> {
    (1..video.frames)
        .map(|i| frame_difference(video.frame(i - 1), video.frame(i), video.height, video.width))
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Frames that start a new shot. A jump counts only if it exceeds
/// `threshold` and three times the median difference in the surrounding
/// five-frame window, which suppresses gradual transitions and steady motion.
pub fn detect_scene_cuts(video: &RawVideo, threshold: f64) -> Vec<usize> {
    cuts_from_differences(&frame_differences(video), threshold)
}

pub fn cuts_from_differences(d: &[f64], threshold: f64) -> Vec<usize> {
    (0..d.len())
        .filter(|&i| {
            let window = d[i.saturating_sub(2)..(i + 3).min(d.len())].to_vec();
            d[i] > threshold && d[i] > 3.0 * median(window)
        })
        .map(|i| i + 1)
        .collect()
}

/// Cuts each shot greedily into `max_s` spans; a trailing remainder is kept
/// only if it lasts at least `min_s`.
pub fn split_clips(cuts: &[usize], total_frames: usize, fps: f64, min_s: f64, max_s: f64) -> Vec<Range<usize>> {
    let max_f = (max_s * fps + 1e-9).floor() as usize;
    let min_f = (min_s * fps - 1e-9).ceil() as usize;
    let mut bounds = vec![0];
    bounds.extend(cuts.iter().copied().filter(|&c| c > 0 && c < total_frames));
    bounds.push(total_frames);
    let mut spans = Vec::new();
    for shot in bounds.windows(2) {
        let (mut start, end) = (shot[0], shot[1]);
        while max_f > 0 && end - start >= max_f {
            spans.push(start..start + max_f);
            start += max_f;
        }
        if end > start && end - start >= min_f.max(1) {
            spans.push(start..end);
        }
    }
    spans
}
