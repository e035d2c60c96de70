//! Position encodings: factorized sinusoidal APE and axial 3D RoPE.

use crate::error::{config, Error, Result};
use crate::tensor::Tensor;

const BASE: f64 = 10_000.0;

/// `[sin(p·ω_0..), cos(p·ω_0..)]` with `ω_i = BASE^{-2i/d}`.
fn sincos(pos: f64, d: usize) -> Vec<f64> {
    let half = d / 2;
    let freqs = (0..half).map(|i| BASE.powf(-2.0 * i as f64 / d as f64));
    let (s, c): (Vec<f64>, Vec<f64>) = freqs.map(|w| ((pos * w).sin(), (pos * w).cos())).unzip();
    [s, c].concat()
}

/// Sinusoidal embedding of scalar timesteps, `[n, dim]`.
pub fn timestep_embedding(t: &[f64], dim: usize) -> Tensor {
    let v: Vec<f64> = t.iter().flat_map(|&ti| sincos(1000.0 * ti, dim)).collect();
    Tensor::new([t.len(), dim], v).expect("timestep embedding shape")
}

fn check_hidden(hidden: usize) -> Result<()> {
    if hidden == 0 || !hidden.is_multiple_of(4) {
        return Err(config(format!("APE width {hidden} must be a positive multiple of 4")));
    }
    Ok(())
}

/// Image-model table: row embedding in the first half, column in the second.
pub fn spatial_row(h: usize, w: usize, hidden: usize) -> Vec<f64> {
    [sincos(h as f64, hidden / 2), sincos(w as f64, hidden / 2)].concat()
}

/// Extra per-frame term, zero at frame 0 so single-frame grids match the
/// image table.
pub fn temporal_row(t: usize, hidden: usize) -> Vec<f64> {
    let at = sincos(t as f64, hidden);
    let zero = sincos(0.0, hidden);
    at.iter().zip(&zero).map(|(a, b)| a - b).collect()
}

pub fn build_spatial_ape(rows: usize, cols: usize, hidden: usize) -> Result<Tensor> {
    check_hidden(hidden)?;
    let v: Vec<f64> = (0..rows).flat_map(|h| (0..cols).flat_map(move |w| spatial_row(h, w, hidden))).collect();
    Ok(Tensor::new([rows * cols, hidden], v)?)
}

/// `[L, hidden]` table for a `(frames, rows, cols)` token grid.
pub fn build_ape(grid: (usize, usize, usize), hidden: usize) -> Result<Tensor> {
    check_hidden(hidden)?;
    let (gt, gh, gw) = grid;
    let mut v = Vec::with_capacity(gt * gh * gw * hidden);
    for t in 0..gt {
        let tr = temporal_row(t, hidden);
        for h in 0..gh {
            for w in 0..gw {
                v.extend(spatial_row(h, w, hidden).iter().zip(&tr).map(|(a, b)| a + b));
            }
        }
    }
    Ok(Tensor::new([gt * gh * gw, hidden], v)?)
}

/// Widths of the (t, h, w) blocks of a rotary head. Height and width get
/// `2⌊d/6⌋` features each; time takes the rest.
pub fn rope_split(head_dim: usize) -> Result<[usize; 3]> {
    if !head_dim.is_multiple_of(2) || head_dim < 6 {
        return Err(config(format!("RoPE head_dim {head_dim} must be even and at least 6")));
    }
    let hw = 2 * (head_dim / 6);
    Ok([head_dim - 2 * hw, hw, hw])
}

/// Rotation angles `[L, head_dim/2]` for 3D positions.
pub fn rope_angles(positions: &[[f64; 3]], head_dim: usize) -> Result<Vec<f64>> {
    let split = rope_split(head_dim)?;
    let mut out = Vec::with_capacity(positions.len() * head_dim / 2);
    for p in positions {
        for (axis, &d) in split.iter().enumerate() {
            for i in 0..d / 2 {
                out.push(p[axis] * BASE.powf(-2.0 * i as f64 / d as f64));
            }
        }
    }
    Ok(out)
}

/// Rotates `q` and `k` (`[heads, L, head_dim]`) by their token positions.
pub fn apply_rope(q: &Tensor, k: &Tensor, positions: &[[f64; 3]]) -> Result<(Tensor, Tensor)> {
    let d = *q.shape().last().unwrap_or(&0);
    if q.shape() != k.shape() {
        return Err(Error::Shape(format!("rope: q {:?} vs k {:?}", q.shape(), k.shape())));
    }
    let angles = rope_angles(positions, d)?;
    Ok((q.rotate_pairs(&angles)?, k.rotate_pairs(&angles)?))
}

pub fn grid_positions_f64(grid: (usize, usize, usize)) -> Vec<[f64; 3]> {
    super::patch::grid_positions(grid).into_iter().map(|p| p.map(|v| v as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn ape_factorization() {
        let hid = 16;
        let ape = build_ape((3, 2, 2), hid).unwrap();
        let row = |t: usize, h: usize, w: usize| &ape.values()[((t * 2 + h) * 2 + w) * hid..][..hid];
        let dt: Vec<f64> = temporal_row(2, hid).iter().zip(temporal_row(1, hid)).map(|(a, b)| a - b).collect();
        let diff: Vec<f64> = row(2, 1, 0).iter().zip(row(1, 1, 0)).map(|(a, b)| a - b).collect();
        for (a, b) in diff.iter().zip(&dt) {
            assert!((a - b).abs() < 1e-15);
        }
        let ds: Vec<f64> = spatial_row(1, 1, hid).iter().zip(spatial_row(0, 0, hid)).map(|(a, b)| a - b).collect();
        let diff: Vec<f64> = row(2, 1, 1).iter().zip(row(2, 0, 0)).map(|(a, b)| a - b).collect();
        for (a, b) in diff.iter().zip(&ds) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn single_frame_matches_image_table() {
        assert_eq!(build_ape((1, 3, 5), 32).unwrap(), build_spatial_ape(3, 5, 32).unwrap());
        assert!(build_ape((1, 1, 1), 6).is_err());
    }

    #[test]
    fn rope_split_rules() {
        assert_eq!(rope_split(16).unwrap(), [8, 4, 4]);
        assert_eq!(rope_split(64).unwrap(), [24, 20, 20]);
        assert!(rope_split(15).is_err());
        assert!(rope_split(4).is_err());
    }

    #[test]
    fn rope_origin_is_identity_and_isometric() {
        let mut rng = seeded(3);
        let q = Tensor::randn([2, 4, 12], 1.0, &mut rng);
        let k = Tensor::randn([2, 4, 12], 1.0, &mut rng);
        let (q0, k0) = apply_rope(&q, &k, &[[0.0; 3]; 4]).unwrap();
        assert!(q0.max_abs_diff(&q) == 0.0 && k0.max_abs_diff(&k) == 0.0);
        let pos = [[0.0, 1.0, 2.0], [3.0, 0.0, 1.0], [5.0, 7.0, 0.0], [1.0, 1.0, 1.0]];
        let (qr, _) = apply_rope(&q, &k, &pos).unwrap();
        for (a, b) in qr.values().chunks(12).zip(q.values().chunks(12)) {
            assert!((dot(a, a).sqrt() - dot(b, b).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn rope_scores_depend_on_offsets_only() {
        let d = 12;
        let mut rng = seeded(4);
        let q = Tensor::randn([1, 1, d], 1.0, &mut rng).values().to_vec();
        let k = Tensor::randn([1, 1, d], 1.0, &mut rng).values().to_vec();
        let grid = grid_positions_f64((2, 3, 3));
        let n = grid.len();
        let rep = |v: &[f64]| Tensor::new([1, n, d], v.repeat(n)).unwrap();
        let scores = |pos: &[[f64; 3]]| {
            let (qr, kr) = apply_rope(&rep(&q), &rep(&k), pos).unwrap();
            let mut s = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    s.push(dot(&qr.values()[i * d..(i + 1) * d], &kr.values()[j * d..(j + 1) * d]));
                }
            }
            s
        };
        let base = scores(&grid);
        let moved: Vec<[f64; 3]> = grid.iter().map(|p| [p[0] + 3.0, p[1] + 5.0, p[2] + 11.0]).collect();
        let shifted = scores(&moved);
        let worst = base.iter().zip(&shifted).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-10, "{worst}");
    }
}
