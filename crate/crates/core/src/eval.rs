//! Distribution distances for toy-scale fidelity checks, and the GSB
//! preference ratio.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::named;
use crate::tensor::Tensor;

pub const SLICED_DIRECTIONS: usize = 64;
pub const SLICED_SEED: u64 = 0x5eed;

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Squared 2-Wasserstein distance between two 1D empirical measures,
/// exact via the quantile coupling (sizes may differ).
pub fn w2_squared_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Contract("W2 of an empty sample set".into()));
    }
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len(), b.len());
    if na == nb {
        return Ok(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / na as f64);
    }
    // walk the merged quantile breakpoints i/na and j/nb
    let (mut i, mut j, mut u, mut acc) = (0usize, 0usize, 0.0f64, 0.0f64);
    while i < na && j < nb {
        let next = ((i + 1) as f64 / na as f64).min((j + 1) as f64 / nb as f64);
        acc += (next - u) * (a[i] - b[j]) * (a[i] - b[j]);
        u = next;
        if ((i + 1) as f64 / na as f64) <= next {
            i += 1;
        }
        if ((j + 1) as f64 / nb as f64) <= next {
            j += 1;
        }
    }
    Ok(acc)
}

pub fn w2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(w2_squared_1d(a, b)?.sqrt())
}

fn rows(x: &Tensor) -> Result<(usize, usize)> {
    match x.shape() {
        [n] => Ok((*n, 1)),
        [n, d] => Ok((*n, *d)),
        s => Err(Error::Shape(format!("samples must be [n] or [n, d], got {s:?}"))),
    }
}

/// Sliced W2: root mean squared 1D W2 over seeded random unit directions.
pub fn sliced_w2(a: &Tensor, b: &Tensor, directions: usize, seed: u64) -> Result<f64> {
    let (na, d) = rows(a)?;
    let (nb, db) = rows(b)?;
    if na == 0 || nb == 0 {
        return Err(Error::Contract("W2 of an empty sample set".into()));
    }
    if d != db {
        return Err(Error::Shape(format!("sample dims differ: {d} vs {db}")));
    }
    let mut rng = named(seed, "sliced-w2");
    let mut total = 0.0;
    for _ in 0..directions {
        let mut dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|v| *v /= n);
        let proj = |x: &Tensor| -> Vec<f64> { x.values().chunks(d).map(|r| r.iter().zip(&dir).map(|(p, q)| p * q).sum()).collect() };
        total += w2_squared_1d(&proj(a), &proj(b))?;
    }
    Ok((total / directions as f64).sqrt())
}

/// Exact W2 for 1D samples, sliced W2 over 64 fixed directions otherwise.
pub fn eval_w2(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (_, d) = rows(a)?;
    if d == 1 {
        let (_, db) = rows(b)?;
        if db != 1 {
            return Err(Error::Shape(format!("sample dims differ: 1 vs {db}")));
        }
        return w2_1d(a.values(), b.values());
    }
    sliced_w2(a, b, SLICED_DIRECTIONS, SLICED_SEED)
}

/// `(good + same) / (bad + same)`.
pub fn gsb_ratio(good: u64, same: u64, bad: u64) -> Result<f64> {
    if same + bad == 0 {
        return Err(Error::Contract("GSB ratio undefined when same + bad = 0".into()));
    }
    Ok((good + same) as f64 / (bad + same) as f64)
}
