//! Full (non-causal) multi-head attention with RMS-normalized queries and keys.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-feature RMSNorm gains for queries and keys, `[head_dim]` each.
#[derive(Clone, Debug)]
pub struct QkNorm {
    pub q_gain: Tensor,
    pub k_gain: Tensor,
    pub eps: f64,
}

impl QkNorm {
    pub fn unit(head_dim: usize, eps: f64) -> Self {
        Self { q_gain: Tensor::ones([head_dim]), k_gain: Tensor::ones([head_dim]), eps }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct AttnOptions<'a> {
    /// Rotary angles `[L, head_dim/2]`, applied after normalization.
    pub rope: Option<&'a [f64]>,
    /// Keys with `false` receive zero weight (padding).
    pub key_mask: Option<&'a [bool]>,
}

fn check(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<()> {
    if q.rank() != 3 || q.shape() != k.shape() || k.shape()[..2] != v.shape()[..2] || v.rank() != 3 {
        return Err(Error::Shape(format!(
            "attention expects q, k, v as [heads, L, head_dim]; got {:?}, {:?}, {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    Ok(())
}

/// Softmax weights `[heads, L, L]`.
pub fn attention_weights(q: &Tensor, k: &Tensor, norm: &QkNorm, opts: AttnOptions<'_>) -> Result<Tensor> {
    let (heads, l, d) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    let mut qn = q.rms_norm(&norm.q_gain, norm.eps)?;
    let mut kn = k.rms_norm(&norm.k_gain, norm.eps)?;
    if let Some(angles) = opts.rope {
        qn = qn.rotate_pairs(angles)?;
        kn = kn.rotate_pairs(angles)?;
    }
    let mut scores = qn.bmm(&kn.transpose()?)?.scale(1.0 / (d as f64).sqrt());
    if let Some(mask) = opts.key_mask {
        if mask.len() != l {
            return Err(Error::Shape(format!("key mask of length {} for {l} tokens", mask.len())));
        }
        let row: Vec<f64> = mask.iter().map(|&keep| if keep { 0.0 } else { -1e300 }).collect();
        scores = scores.add(&Tensor::new([heads, l, l], row.repeat(heads * l))?)?;
    }
    Ok(scores.softmax(2)?)
}

pub fn attention_with(q: &Tensor, k: &Tensor, v: &Tensor, norm: &QkNorm, opts: AttnOptions<'_>) -> Result<Tensor> {
    check(q, k, v)?;
    Ok(attention_weights(q, k, norm, opts)?.bmm(v)?)
}

/// `softmax(norm(q) norm(k)ᵀ / √d) v`.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, norm: &QkNorm) -> Result<Tensor> {
    attention_with(q, k, v, norm, AttnOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn single_token_returns_v() {
        let mut rng = seeded(1);
        let q = Tensor::randn([3, 1, 4], 1.0, &mut rng);
        let k = Tensor::randn([3, 1, 4], 1.0, &mut rng);
        let v = Tensor::randn([3, 1, 4], 1.0, &mut rng);
        assert_eq!(attention(&q, &k, &v, &QkNorm::unit(4, 1e-6)).unwrap(), v);
    }

    #[test]
    fn two_token_hand_case() {
        // unit-gain norm keeps q = (1,1); k rows normalize to (1,-1), (1,1)
        // and the k gain scales the second score to ln 3
        let gk = 3f64.ln() * 2f64.sqrt() / 2.0;
        let norm = QkNorm { q_gain: Tensor::ones([2]), k_gain: Tensor::full([2], gk), eps: 0.0 };
        let q = Tensor::new([1, 2, 2], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let k = Tensor::new([1, 2, 2], vec![2.0, -2.0, 0.5, 0.5]).unwrap();
        let v = Tensor::new([1, 2, 2], vec![1.0, 10.0, 5.0, -2.0]).unwrap();
        let out = attention(&q, &k, &v, &norm).unwrap();
        let want = [0.25 * 1.0 + 0.75 * 5.0, 0.25 * 10.0 + 0.75 * -2.0];
        for row in out.values().chunks(2) {
            assert!((row[0] - want[0]).abs() < 1e-12 && (row[1] - want[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn raw_scale_invariance() {
        let mut rng = seeded(2);
        let q = Tensor::randn([2, 5, 8], 1.0, &mut rng);
        let k = Tensor::randn([2, 5, 8], 1.0, &mut rng);
        let v = Tensor::randn([2, 5, 8], 1.0, &mut rng);
        let norm = QkNorm { q_gain: Tensor::randn([8], 1.0, &mut rng), k_gain: Tensor::randn([8], 1.0, &mut rng), eps: 0.0 };
        let base = attention(&q, &k, &v, &norm).unwrap();
        assert!(attention(&q.scale(10.0), &k, &v, &norm).unwrap().max_abs_diff(&base) <= 1e-12);
        assert!(attention(&q, &k.scale(0.37), &v, &norm).unwrap().max_abs_diff(&base) <= 1e-12);
    }

    #[test]
    fn masked_keys_get_zero_weight() {
        let mut rng = seeded(3);
        let q = Tensor::randn([1, 3, 4], 1.0, &mut rng);
        let k = Tensor::randn([1, 3, 4], 1.0, &mut rng);
        let w = attention_weights(&q, &k, &QkNorm::unit(4, 1e-6), AttnOptions { rope: None, key_mask: Some(&[true, false, true]) })
            .unwrap();
        for row in w.values().chunks(3) {
            assert_eq!(row[1], 0.0);
            assert!((row[0] + row[2] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_errors() {
        let a = Tensor::zeros([1, 2, 4]);
        assert!(attention(&a, &Tensor::zeros([1, 3, 4]), &a, &QkNorm::unit(4, 1e-6)).is_err());
    }
}
