//! Block-matching optical flow and a robust affine background fit.

use nalgebra::{DMatrix, DVector};

use crate::error::{CurationError, Result};
use crate::frame::{check_frame, luminance};

/// Per-pixel displacement from frame `a` to frame `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, dx: vec![0.0; height * width], dy: vec![0.0; height * width] }
    }

    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.dx[i], self.dy[i])
    }

    /// `[2, H, W]`, channel 0 horizontal.
    pub fn to_tensor(&self) -> vidgen_core::Tensor {
        vidgen_core::Tensor::new([2, self.height, self.width], [self.dx.clone(), self.dy.clone()].concat())
            .expect("flow shape")
    }
}

/// Candidate displacements within `radius`, nearest first so ties resolve
/// to the smallest motion.
fn candidates(radius: isize) -> Vec<(isize, isize)> {
    let mut c: Vec<(isize, isize)> =
        (-radius..=radius).flat_map(|dy| (-radius..=radius).map(move |dx| (dx, dy))).collect();
    c.sort_by_key(|&(dx, dy)| (dx.abs() + dy.abs(), dx.abs().max(dy.abs()), dy, dx));
    c
}

/// Exhaustive block matching on luminance: each `block`×`block` tile of `a`
/// takes the displacement within `radius` with the lowest mean absolute
/// difference in `b`, broadcast to its pixels.
pub fn estimate_flow(a: &[f64], b: &[f64], h: usize, w: usize, block: usize, radius: usize) -> Result<FlowField> {
    check_frame(a, h, w)?;
    check_frame(b, h, w)?;
    if block == 0 {
        return Err(CurationError::Config("flow block size must be positive".into()));
    }
    if !h.is_multiple_of(block) || !w.is_multiple_of(block) {
        return Err(CurationError::Shape(format!("{h}×{w} frame is not divisible into {block}px blocks")));
    }
    let (la, lb) = (luminance(a, h, w), luminance(b, h, w));
    let mut flow = FlowField::zeros(h, w);
    let cands = candidates(radius as isize);
    for by in (0..h).step_by(block) {
        for bx in (0..w).step_by(block) {
            let (bh, bw) = (block, block);
            let mut best = (f64::INFINITY, (0isize, 0isize));
            for &(dx, dy) in &cands {
                let (mut sad, mut n) = (0.0, 0usize);
                for y in by..by + bh {
                    let ty = y as isize + dy;
                    if ty < 0 || ty >= h as isize {
                        continue;
                    }
                    for x in bx..bx + bw {
                        let tx = x as isize + dx;
                        if tx < 0 || tx >= w as isize {
                            continue;
                        }
                        sad += (la[y * w + x] - lb[ty as usize * w + tx as usize]).abs();
                        n += 1;
                    }
                }
                if 2 * n < bh * bw {
                    continue;
                }
                let cost = sad / n as f64;
                if cost < best.0 {
                    best = (cost, (dx, dy));
                }
            }
            for y in by..by + bh {
                for x in bx..bx + bw {
                    flow.dx[y * w + x] = best.1 .0 as f64;
                    flow.dy[y * w + x] = best.1 .1 as f64;
                }
            }
        }
    }
    Ok(flow)
}

/// `dx = p0 + p1·x + p2·y`, `dy = p3 + p4·x + p5·y`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineFit {
    pub params: [f64; 6],
    /// Sample points `(x, y)` the fit was evaluated on.
    pub points: Vec<(usize, usize)>,
    /// Residual at most the inlier tolerance after the final fit.
    pub inliers: Vec<bool>,
    pub residuals: Vec<f64>,
    /// Degenerate system; `params` fall back to zero motion.
    pub singular: bool,
}

impl AffineFit {
    pub fn predict(&self, x: f64, y: f64) -> (f64, f64) {
        let p = &self.params;
        (p[0] + p[1] * x + p[2] * y, p[3] + p[4] * x + p[5] * y)
    }

    pub fn translation(&self) -> (f64, f64) {
        (self.params[0], self.params[3])
    }

    pub fn linear(&self) -> [[f64; 2]; 2] {
        [[self.params[1], self.params[2]], [self.params[4], self.params[5]]]
    }
}

pub const TRIM_FRACTION: f64 = 0.2;

fn least_squares(pts: &[(f64, f64, f64, f64)]) -> Option<[f64; 6]> {
    if pts.len() < 4 {
        return None;
    }
    let a = DMatrix::from_fn(pts.len(), 3, |r, c| match c {
        0 => 1.0,
        1 => pts[r].0,
        _ => pts[r].1,
    });
    let svd = a.svd(true, true);
    let sv = &svd.singular_values;
    let (max, min) = (sv.max(), sv.min());
    if !(max > 0.0) || min / max < 1e-9 {
        return None;
    }
    let bx = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.2));
    let by = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.3));
    let px = svd.solve(&bx, 1e-12).ok()?;
    let py = svd.solve(&by, 1e-12).ok()?;
    Some([px[0], px[1], px[2], py[0], py[1], py[2]])
}

/// Least-squares affine camera motion on a `stride` grid, refit after
/// discarding the worst-fitting fifth of the points.
pub fn fit_background_transform(flow: &FlowField, stride: usize, inlier_tol: f64) -> Result<AffineFit> {
    if stride == 0 {
        return Err(CurationError::Config("fit stride must be positive".into()));
    }
    let points: Vec<(usize, usize)> = (stride / 2..flow.height)
        .step_by(stride)
        .flat_map(|y| (stride / 2..flow.width).step_by(stride).map(move |x| (x, y)))
        .collect();
    let samples: Vec<(f64, f64, f64, f64)> = points
        .iter()
        .map(|&(x, y)| {
            let (dx, dy) = flow.at(y, x);
            (x as f64, y as f64, dx, dy)
        })
        .collect();
    let resid = |p: &[f64; 6], s: &(f64, f64, f64, f64)| {
        let ex = s.2 - (p[0] + p[1] * s.0 + p[2] * s.1);
        let ey = s.3 - (p[3] + p[4] * s.0 + p[5] * s.1);
        ex.hypot(ey)
    };
    let (params, singular) = match least_squares(&samples) {
        None => ([0.0; 6], true),
        Some(first) => {
            let r: Vec<f64> = samples.iter().map(|s| resid(&first, s)).collect();
            let mut order: Vec<usize> = (0..samples.len()).collect();
            order.sort_by(|&i, &j| r[i].total_cmp(&r[j]).then(i.cmp(&j)));
            let keep = ((1.0 - TRIM_FRACTION) * samples.len() as f64).ceil() as usize;
            let kept: Vec<_> = order[..keep].iter().map(|&i| samples[i]).collect();
            match least_squares(&kept) {
                Some(p) => (p, false),
                None => (first, false),
            }
        }
    };
    let residuals: Vec<f64> = samples.iter().map(|s| resid(&params, s)).collect();
    let inliers = residuals.iter().map(|&r| r <= inlier_tol).collect();
    Ok(AffineFit { params, points, inliers, residuals, singular })
}

#[cfg(test)]
mod tests {
    use super::*;
    use vidgen_core::synth::{shift_wrap, texture};

    fn field(h: usize, w: usize, f: impl Fn(usize, usize) -> (f64, f64)) -> FlowField {
        let mut fl = FlowField::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = f(y, x);
                fl.dx[y * w + x] = dx;
                fl.dy[y * w + x] = dy;
            }
        }
        fl
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let a = texture(16, 16, 1);
        let f = estimate_flow(&a, &a, 16, 16, 4, 3).unwrap();
        assert!(f.dx.iter().chain(&f.dy).all(|v| *v == 0.0));
    }

    #[test]
    fn translation_recovered_on_interior_blocks() {
        let (h, w) = (32, 32);
        let a = texture(h, w, 2);
        let b = shift_wrap(&a, h, w, 2, -1);
        let f = estimate_flow(&a, &b, h, w, 8, 3).unwrap();
        for y in 8..24 {
            for x in 8..24 {
                assert_eq!(f.at(y, x), (2.0, -1.0), "({x},{y})");
            }
        }
    }

    #[test]
    fn displacement_is_bounded_by_radius() {
        let (h, w) = (16, 48);
        let ramp: Vec<f64> = (0..3).flat_map(|_| (0..h * w).map(|i| (i % w) as f64 / w as f64)).collect();
        let shifted: Vec<f64> = (0..3).flat_map(|_| (0..h * w).map(|i| ((i % w) as f64 - 6.0) / w as f64)).collect();
        let f = estimate_flow(&ramp, &shifted, h, w, 8, 4).unwrap();
        assert!(f.dx.iter().chain(&f.dy).all(|v| v.abs() <= 4.0));
        assert_eq!(f.at(8, 24).0, 4.0);
    }

    #[test]
    fn synthetic_affine_field_exact() {
        let truth = [0.5, 0.01, -0.02, -1.0, 0.03, 0.005];
        let fl = field(40, 60, |y, x| {
            let (x, y) = (x as f64, y as f64);
            (truth[0] + truth[1] * x + truth[2] * y, truth[3] + truth[4] * x + truth[5] * y)
        });
        let fit = fit_background_transform(&fl, 4, 0.5).unwrap();
        assert!(!fit.singular);
        for (a, b) in fit.params.iter().zip(truth) {
            assert!((a - b).abs() < 1e-9, "{:?}", fit.params);
        }
        assert!(fit.inliers.iter().all(|&i| i));
    }

    #[test]
    fn rotation_about_centre_recovered() {
        let (theta, cx, cy) = (0.02f64, 24.0, 16.0);
        let (c, s) = (theta.cos(), theta.sin());
        let fl = field(32, 48, |y, x| {
            let (u, v) = (x as f64 - cx, y as f64 - cy);
            (c * u - s * v - u, s * u + c * v - v)
        });
        let fit = fit_background_transform(&fl, 4, 0.5).unwrap();
        let l = fit.linear();
        let want = [[c - 1.0, -s], [s, c - 1.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((l[i][j] - want[i][j]).abs() < 1e-6, "{l:?}");
            }
        }
    }

    #[test]
    fn pure_translation_has_zero_residual() {
        let fl = field(16, 16, |_, _| (2.0, 0.0));
        let fit = fit_background_transform(&fl, 4, 0.5).unwrap();
        assert!((fit.translation().0 - 2.0).abs() < 1e-12 && fit.translation().1.abs() < 1e-12);
        assert!(fit.residuals.iter().all(|r| *r < 1e-12));
    }

    #[test]
    fn shape_errors() {
        let a = texture(12, 16, 0);
        assert!(matches!(estimate_flow(&a, &a, 12, 16, 8, 2), Err(CurationError::Shape(_))));
        assert!(estimate_flow(&a, &a[3..], 12, 16, 4, 2).is_err());
    }

    #[test]
    fn foreground_region_is_trimmed() {
        let fl = field(64, 64, |y, x| if (8..28).contains(&y) && (8..24).contains(&x) { (-3.0, 1.0) } else { (2.0, 0.0) });
        let fit = fit_background_transform(&fl, 4, 0.5).unwrap();
        let (tx, ty) = fit.translation();
        assert!((tx - 2.0).abs() < 0.1 && ty.abs() < 0.1, "{:?}", fit.params);
        let fg: Vec<bool> = fit
            .points
            .iter()
            .zip(&fit.inliers)
            .filter(|((x, y), _)| (8..24).contains(x) && (8..28).contains(y))
            .map(|(_, &inl)| inl)
            .collect();
        assert!(!fg.is_empty() && fg.iter().all(|inl| !inl));
    }

    #[test]
    fn degenerate_grid_is_flagged() {
        let fl = field(4, 4, |_, _| (1.0, 1.0));
        let fit = fit_background_transform(&fl, 4, 0.5).unwrap();
        assert!(fit.singular);
        assert_eq!(fit.params, [0.0; 6]);
    }
}
