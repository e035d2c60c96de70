use std::sync::Arc;

use super::tape::record;
use super::{check_axis, split_at_axis, Result, Tensor, TensorError};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(TensorError::Shape { op, lhs: a.shape.clone(), rhs: b.shape.clone() });
    }
    Ok(())
}

fn last_axis_match(op: &'static str, x: &Tensor, v: &Tensor) -> Result<usize> {
    let n = *x.shape.last().ok_or(TensorError::Axis { op, axis: 0, rank: 0 })?;
    if v.shape != [n] {
        return Err(TensorError::Shape { op, lhs: x.shape.clone(), rhs: v.shape.clone() });
    }
    Ok(n)
}

// c[m,n] = a[m,k] b[k,n]
pub(crate) fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
    c
}

// c[m,k] = g[m,n] b[k,n]^T
fn mm_nt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            c[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

// c[k,n] = a[m,k]^T g[m,n]
fn mm_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, gv) in crow.iter_mut().zip(grow) {
                *cv += aip * gv;
            }
        }
    }
    c
}

pub(crate) fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = data.len();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..total {
        out.push(data[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out, out_shape)
}

impl Tensor {
    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Tensor {
        let out: Vec<f64> = self.data.iter().map(|&x| f(x)).collect();
        let xs = self.data.clone();
        let ys: Arc<[f64]> = Arc::from(out.clone());
        record(op, self.shape.clone(), out, &[self], move |g, _| {
            vec![Some(g.iter().zip(xs.iter().zip(ys.iter())).map(|(g, (&x, &y))| g * df(x, y)).collect())]
        })
    }

    /// Elementwise op with a caller-supplied derivative `df(x)`.
    pub fn map_with_grad(
        &self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Tensor {
        self.unary(op, f, move |x, _| df(x))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let out = self.data.iter().zip(other.data.iter()).map(|(a, b)| a + b).collect();
        Ok(record("add", self.shape.clone(), out, &[self, other], |g, _| {
            vec![Some(g.to_vec()), Some(g.to_vec())]
        }))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let out = self.data.iter().zip(other.data.iter()).map(|(a, b)| a - b).collect();
        Ok(record("sub", self.shape.clone(), out, &[self, other], |g, _| {
            vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]
        }))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let out = self.data.iter().zip(other.data.iter()).map(|(a, b)| a * b).collect();
        let (a, b) = (self.data.clone(), other.data.clone());
        Ok(record("mul", self.shape.clone(), out, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| g.iter().zip(b.iter()).map(|(g, b)| g * b).collect()),
                needs[1].then(|| g.iter().zip(a.iter()).map(|(g, a)| g * a).collect()),
            ]
        }))
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("div", self, other)?;
        let out = self.data.iter().zip(other.data.iter()).map(|(a, b)| a / b).collect();
        let (a, b) = (self.data.clone(), other.data.clone());
        Ok(record("div", self.shape.clone(), out, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| g.iter().zip(b.iter()).map(|(g, b)| g / b).collect()),
                needs[1].then(|| {
                    g.iter().zip(a.iter().zip(b.iter())).map(|(g, (a, b))| -g * a / (b * b)).collect()
                }),
            ]
        }))
    }

    /// Adds `v` (shape `[n]`) to every row along the last axis.
    pub fn add_last(&self, v: &Tensor) -> Result<Tensor> {
        let n = last_axis_match("add_last", self, v)?;
        let out = self.data.iter().enumerate().map(|(i, x)| x + v.data[i % n]).collect();
        Ok(record("add_last", self.shape.clone(), out, &[self, v], move |g, needs| {
            let gv = needs[1].then(|| {
                let mut acc = vec![0.0; n];
                g.iter().enumerate().for_each(|(i, g)| acc[i % n] += g);
                acc
            });
            vec![needs[0].then(|| g.to_vec()), gv]
        }))
    }

    /// Multiplies every row along the last axis by `v` (shape `[n]`).
    pub fn mul_last(&self, v: &Tensor) -> Result<Tensor> {
        let n = last_axis_match("mul_last", self, v)?;
        let out = self.data.iter().enumerate().map(|(i, x)| x * v.data[i % n]).collect();
        let (x, vv) = (self.data.clone(), v.data.clone());
        Ok(record("mul_last", self.shape.clone(), out, &[self, v], move |g, needs| {
            let gx = needs[0].then(|| g.iter().enumerate().map(|(i, g)| g * vv[i % n]).collect());
            let gv = needs[1].then(|| {
                let mut acc = vec![0.0; n];
                g.iter().zip(x.iter()).enumerate().for_each(|(i, (g, x))| acc[i % n] += g * x);
                acc
            });
            vec![gx, gv]
        }))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary("scale", |x| c * x, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary("add_scalar", |x| x + c, |_, _| 1.0)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn exp(&self) -> Tensor {
        self.unary("exp", f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Tensor {
        self.unary("ln", f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary("sqrt", f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn square(&self) -> Tensor {
        self.unary("square", |x| x * x, |x, _| 2.0 * x)
    }

    pub fn tanh(&self) -> Tensor {
        self.unary("tanh", f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary("sigmoid", sigmoid, |_, y| y * (1.0 - y))
    }

    /// x · sigmoid(x)
    pub fn silu(&self) -> Tensor {
        self.unary("silu", |x| x * sigmoid(x), |x, _| {
            let s = sigmoid(x);
            s * (1.0 + x * (1.0 - s))
        })
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.unary("clamp", |x| x.clamp(lo, hi), move |x, _| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 })
    }

    pub fn sum(&self) -> Tensor {
        let s = self.data.iter().sum();
        let n = self.len();
        record("sum", Vec::new(), vec![s], &[self], move |g, _| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(&self) -> Tensor {
        let n = self.len() as f64;
        let s: f64 = self.data.iter().sum::<f64>() / n;
        let len = self.len();
        record("mean", Vec::new(), vec![s], &[self], move |g, _| vec![Some(vec![g[0] / n; len])])
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        check_axis("sum_axis", axis, self.rank())?;
        let (outer, n, inner) = split_at_axis(&self.shape, axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..n {
                let base = (o * n + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += self.data[base + i];
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        Ok(record("sum_axis", shape, out, &[self], move |g, _| {
            let mut gx = vec![0.0; outer * n * inner];
            for o in 0..outer {
                for a in 0..n {
                    let base = (o * n + a) * inner;
                    gx[base..base + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(gx)]
        }))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        check_axis("mean_axis", axis, self.rank())?;
        let n = self.shape[axis] as f64;
        Ok(self.sum_axis(axis)?.scale(1.0 / n))
    }

    /// `[m,k] × [k,n] → [m,n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let err = || TensorError::Shape { op: "matmul", lhs: self.shape.clone(), rhs: other.shape.clone() };
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(err());
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let out = mm(&self.data, &other.data, m, k, n);
        let (a, b) = (self.data.clone(), other.data.clone());
        Ok(record("matmul", vec![m, n], out, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| mm_nt(g, &b, m, n, k)),
                needs[1].then(|| mm_tn(&a, g, m, k, n)),
            ]
        }))
    }

    /// Batched product `[b,m,k] × [b,k,n] → [b,m,n]`.
    pub fn bmm(&self, other: &Tensor) -> Result<Tensor> {
        let err = || TensorError::Shape { op: "bmm", lhs: self.shape.clone(), rhs: other.shape.clone() };
        if self.rank() != 3 || other.rank() != 3 || self.shape[0] != other.shape[0] || self.shape[2] != other.shape[1] {
            return Err(err());
        }
        let (bs, m, k, n) = (self.shape[0], self.shape[1], self.shape[2], other.shape[2]);
        let mut out = Vec::with_capacity(bs * m * n);
        for i in 0..bs {
            out.extend(mm(&self.data[i * m * k..(i + 1) * m * k], &other.data[i * k * n..(i + 1) * k * n], m, k, n));
        }
        let (a, b) = (self.data.clone(), other.data.clone());
        Ok(record("bmm", vec![bs, m, n], out, &[self, other], move |g, needs| {
            let mut ga = needs[0].then(|| Vec::with_capacity(bs * m * k));
            let mut gb = needs[1].then(|| Vec::with_capacity(bs * k * n));
            for i in 0..bs {
                let gi = &g[i * m * n..(i + 1) * m * n];
                if let Some(ga) = ga.as_mut() {
                    ga.extend(mm_nt(gi, &b[i * k * n..(i + 1) * k * n], m, n, k));
                }
                if let Some(gb) = gb.as_mut() {
                    gb.extend(mm_tn(&a[i * m * k..(i + 1) * m * k], gi, m, k, n));
                }
            }
            vec![ga, gb]
        }))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::Contract(format!("permute: {perm:?} is not a permutation of rank {rank}")));
        }
        let (out, out_shape) = permute_data(&self.data, &self.shape, perm);
        let mut inverse = vec![0; rank];
        perm.iter().enumerate().for_each(|(i, &p)| inverse[p] = i);
        let shape_for_grad = out_shape.clone();
        Ok(record("permute", out_shape, out, &[self], move |g, _| {
            vec![Some(permute_data(g, &shape_for_grad, &inverse).0)]
        }))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Tensor> {
        let r = self.rank();
        if r < 2 {
            return Err(TensorError::Axis { op: "transpose", axis: 1, rank: r });
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(&perm)
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.len() {
            return Err(TensorError::Shape { op: "reshape", lhs: self.shape.clone(), rhs: shape });
        }
        Ok(record("reshape", shape, self.data.to_vec(), &[self], |g, _| vec![Some(g.to_vec())]))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        check_axis("narrow", axis, self.rank())?;
        let (outer, n, inner) = split_at_axis(&self.shape, axis);
        if start + len > n {
            return Err(TensorError::Contract(format!(
                "narrow: range {start}..{} exceeds extent {n} on axis {axis}",
                start + len
            )));
        }
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(record("narrow", shape, out, &[self], move |g, _| {
            let mut gx = vec![0.0; outer * n * inner];
            for o in 0..outer {
                let base = (o * n + start) * inner;
                gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        }))
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        check_axis("concat", axis, first.rank())?;
        for p in parts {
            let ok = p.rank() == first.rank()
                && p.shape.iter().zip(&first.shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(TensorError::Shape { op: "concat", lhs: first.shape.clone(), rhs: p.shape.clone() });
            }
        }
        let (outer, _, inner) = split_at_axis(&first.shape, axis);
        let extents: Vec<usize> = parts.iter().map(|p| p.shape[axis]).collect();
        let total: usize = extents.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &e) in parts.iter().zip(&extents) {
                out.extend_from_slice(&p.data[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Ok(record("concat", shape, out, parts, move |g, needs| {
            let mut grads: Vec<Option<Vec<f64>>> =
                extents.iter().zip(needs).map(|(&e, &nd)| nd.then(|| Vec::with_capacity(outer * e * inner))).collect();
            let mut off = 0;
            for _ in 0..outer {
                for (gp, &e) in grads.iter_mut().zip(&extents) {
                    if let Some(gp) = gp {
                        gp.extend_from_slice(&g[off..off + e * inner]);
                    }
                    off += e * inner;
                }
            }
            grads
        }))
    }

    /// Rows of a `[rows, d]` table selected by `indices`.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        if self.rank() != 2 || indices.iter().any(|&i| i >= self.shape[0]) {
            return Err(TensorError::Contract(format!(
                "gather_rows: indices out of range for table {:?}",
                self.shape
            )));
        }
        let (rows, d) = (self.shape[0], self.shape[1]);
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&self.data[i * d..(i + 1) * d]);
        }
        let idx = indices.to_vec();
        Ok(record("gather_rows", vec![indices.len(), d], out, &[self], move |g, _| {
            let mut gt = vec![0.0; rows * d];
            for (r, &i) in idx.iter().enumerate() {
                gt[i * d..(i + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]).for_each(|(a, b)| *a += b);
            }
            vec![Some(gt)]
        }))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        check_axis("softmax", axis, self.rank())?;
        let (outer, n, inner) = split_at_axis(&self.shape, axis);
        let mut out = vec![0.0; self.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * n + a) * inner + i;
                let m = (0..n).map(|a| self.data[at(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for a in 0..n {
                    let e = (self.data[at(a)] - m).exp();
                    out[at(a)] = e;
                    z += e;
                }
                for a in 0..n {
                    out[at(a)] /= z;
                }
            }
        }
        let ys: Arc<[f64]> = Arc::from(out.clone());
        Ok(record("softmax", self.shape.clone(), out, &[self], move |g, _| {
            let mut gx = vec![0.0; ys.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |a: usize| (o * n + a) * inner + i;
                    let dot: f64 = (0..n).map(|a| g[at(a)] * ys[at(a)]).sum();
                    for a in 0..n {
                        gx[at(a)] = ys[at(a)] * (g[at(a)] - dot);
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// `gain ⊙ x / sqrt(mean(x²) + eps)` over the last axis.
    pub fn rms_norm(&self, gain: &Tensor, eps: f64) -> Result<Tensor> {
        let n = last_axis_match("rms_norm", self, gain)?;
        let rows = self.len() / n;
        let mut inv = vec![0.0; rows];
        let mut out = vec![0.0; self.len()];
        for r in 0..rows {
            let x = &self.data[r * n..(r + 1) * n];
            let ms = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
            inv[r] = 1.0 / (ms + eps).sqrt();
            for j in 0..n {
                out[r * n + j] = gain.data[j] * x[j] * inv[r];
            }
        }
        let (xs, gs) = (self.data.clone(), gain.data.clone());
        Ok(record("rms_norm", self.shape.clone(), out, &[self, gain], move |g, needs| {
            let mut gx = vec![0.0; xs.len()];
            let mut gg = vec![0.0; n];
            for r in 0..rows {
                let x = &xs[r * n..(r + 1) * n];
                let dy = &g[r * n..(r + 1) * n];
                let s = inv[r];
                let dot: f64 = (0..n).map(|j| gs[j] * dy[j] * x[j]).sum();
                for j in 0..n {
                    gx[r * n + j] = gs[j] * dy[j] * s - x[j] * s * s * s * dot / n as f64;
                    gg[j] += dy[j] * x[j] * s;
                }
            }
            vec![needs[0].then_some(gx), needs[1].then_some(gg)]
        }))
    }

    /// Affine-free layer norm over the last axis.
    pub fn layer_norm(&self, eps: f64) -> Result<Tensor> {
        let n = *self.shape.last().ok_or(TensorError::Axis { op: "layer_norm", axis: 0, rank: 0 })?;
        let rows = self.len() / n;
        let mut inv = vec![0.0; rows];
        let mut out = vec![0.0; self.len()];
        for r in 0..rows {
            let x = &self.data[r * n..(r + 1) * n];
            let mu = x.iter().sum::<f64>() / n as f64;
            let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            inv[r] = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                out[r * n + j] = (x[j] - mu) * inv[r];
            }
        }
        let xhat: Arc<[f64]> = Arc::from(out.clone());
        Ok(record("layer_norm", self.shape.clone(), out, &[self], move |g, _| {
            let mut gx = vec![0.0; xhat.len()];
            for r in 0..rows {
                let dy = &g[r * n..(r + 1) * n];
                let xh = &xhat[r * n..(r + 1) * n];
                let mdy = dy.iter().sum::<f64>() / n as f64;
                let mdyx = dy.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                for j in 0..n {
                    gx[r * n + j] = inv[r] * (dy[j] - mdy - xh[j] * mdyx);
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Rotates feature pairs `(2i, 2i+1)` of a `[..., L, d]` tensor by
    /// `angles[l, i]` (shape `[L, d/2]`), broadcasting over leading axes.
    pub fn rotate_pairs(&self, angles: &[f64]) -> Result<Tensor> {
        let r = self.rank();
        if r < 2 || !self.shape[r - 1].is_multiple_of(2) {
            return Err(TensorError::Contract(format!("rotate_pairs: bad shape {:?}", self.shape)));
        }
        let (l, d) = (self.shape[r - 2], self.shape[r - 1]);
        let half = d / 2;
        if angles.len() != l * half {
            return Err(TensorError::Contract(format!(
                "rotate_pairs: {} angles for {l} positions × {half} pairs",
                angles.len()
            )));
        }
        let (cos, sin): (Arc<[f64]>, Arc<[f64]>) =
            (angles.iter().map(|a| a.cos()).collect(), angles.iter().map(|a| a.sin()).collect());
        let rotate = move |x: &[f64], sign: f64, cos: &[f64], sin: &[f64]| {
            let mut out = vec![0.0; x.len()];
            for (row, chunk) in x.chunks(d).enumerate() {
                let pos = row % l;
                for i in 0..half {
                    let (c, s) = (cos[pos * half + i], sign * sin[pos * half + i]);
                    let (a, b) = (chunk[2 * i], chunk[2 * i + 1]);
                    out[row * d + 2 * i] = a * c - b * s;
                    out[row * d + 2 * i + 1] = a * s + b * c;
                }
            }
            out
        };
        let out = rotate(&self.data, 1.0, &cos, &sin);
        Ok(record("rotate_pairs", self.shape.clone(), out, &[self], move |g, _| {
            vec![Some(rotate(g, -1.0, &cos, &sin))]
        }))
    }

    /// Nearest-neighbour upsampling of the last two axes.
    pub fn upsample2d(&self, fh: usize, fw: usize) -> Result<Tensor> {
        let r = self.rank();
        if r < 2 || fh == 0 || fw == 0 {
            return Err(TensorError::Contract(format!("upsample2d: bad shape {:?}", self.shape)));
        }
        let (h, w) = (self.shape[r - 2], self.shape[r - 1]);
        let (oh, ow) = (h * fh, w * fw);
        let planes = self.len() / (h * w);
        let mut out = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            for y in 0..oh {
                for x in 0..ow {
                    out.push(self.data[p * h * w + (y / fh) * w + x / fw]);
                }
            }
        }
        let mut shape = self.shape.clone();
        shape[r - 2] = oh;
        shape[r - 1] = ow;
        Ok(record("upsample2d", shape, out, &[self], move |g, _| {
            let mut gx = vec![0.0; planes * h * w];
            for p in 0..planes {
                for y in 0..oh {
                    for x in 0..ow {
                        gx[p * h * w + (y / fh) * w + x / fw] += g[(p * oh + y) * ow + x];
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Block-mean pooling of the last two axes.
    pub fn avg_pool2d(&self, fh: usize, fw: usize) -> Result<Tensor> {
        let r = self.rank();
        if r < 2 || fh == 0 || fw == 0 || !self.shape[r - 2].is_multiple_of(fh) || !self.shape[r - 1].is_multiple_of(fw) {
            return Err(TensorError::Contract(format!(
                "avg_pool2d: shape {:?} not divisible by {fh}×{fw}",
                self.shape
            )));
        }
        let (h, w) = (self.shape[r - 2], self.shape[r - 1]);
        let (oh, ow) = (h / fh, w / fw);
        let planes = self.len() / (h * w);
        let norm = 1.0 / (fh * fw) as f64;
        let mut out = vec![0.0; planes * oh * ow];
        for p in 0..planes {
            for y in 0..h {
                for x in 0..w {
                    out[(p * oh + y / fh) * ow + x / fw] += self.data[(p * h + y) * w + x];
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= norm);
        let mut shape = self.shape.clone();
        shape[r - 2] = oh;
        shape[r - 1] = ow;
        Ok(record("avg_pool2d", shape, out, &[self], move |g, _| {
            let mut gx = vec![0.0; planes * h * w];
            for p in 0..planes {
                for y in 0..h {
                    for x in 0..w {
                        gx[(p * h + y) * w + x] = norm * g[(p * oh + y / fh) * ow + x / fw];
                    }
                }
            }
            vec![Some(gx)]
        }))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_small_cases() {
        let id = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let b = t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]);
        assert_eq!(id.matmul(&b).unwrap().to_vec(), vec![3.0, 4.0, 5.0, 6.0]);
        let r = t(&[1, 2], &[1.0, 2.0]).matmul(&t(&[2, 1], &[3.0, 4.0])).unwrap();
        assert_eq!(r.shape(), &[1, 1]);
        assert_eq!(r.item(), 11.0);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = Tensor::zeros([2, 3]).matmul(&Tensor::zeros([2, 3])).unwrap_err();
        assert_eq!(err, TensorError::Shape { op: "matmul", lhs: vec![2, 3], rhs: vec![2, 3] });
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn softmax_cases() {
        let s = Tensor::from_vec(vec![0.0; 3]).softmax(0).unwrap();
        s.values().iter().for_each(|v| assert!((v - 1.0 / 3.0).abs() < 1e-15));
        let s = Tensor::from_vec(vec![1000.0, 1000.0]).softmax(0).unwrap();
        assert_eq!(s.to_vec(), vec![0.5, 0.5]);
        let s = Tensor::from_vec(vec![1.0, 2.0, 3.0]).softmax(0).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (i, v) in s.values().iter().enumerate() {
            assert!((v - ((i + 1) as f64).exp() / z).abs() < 1e-12);
        }
        assert!(matches!(s.softmax(1), Err(TensorError::Axis { .. })));
    }

    #[test]
    fn softmax_on_inner_axis() {
        let x = t(&[2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let s = x.softmax(0).unwrap();
        for c in 0..3 {
            let col = s.values()[c] + s.values()[3 + c];
            assert!((col - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rms_norm_cases() {
        let one = Tensor::ones([4]);
        let y = Tensor::from_vec(vec![2.0; 4]).rms_norm(&one, 0.0).unwrap();
        assert_eq!(y.to_vec(), vec![1.0; 4]);
        let y = Tensor::from_vec(vec![3.0, 4.0]).rms_norm(&Tensor::ones([2]), 0.0).unwrap();
        let r = 12.5f64.sqrt();
        assert!((y.values()[0] - 3.0 / r).abs() < 1e-15);
        assert!((y.values()[1] - 4.0 / r).abs() < 1e-15);
        assert!((y.values()[0] - 0.848_528_137_423_857).abs() < 1e-12);
    }

    #[test]
    fn permute_round_trip() {
        let x = Tensor::new([2, 3, 4], (0..24).map(f64::from).collect()).unwrap();
        let p = x.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        // p[k, i, j] = x[i, j, k]
        assert_eq!(p.values()[(2 + 1) * 3 + 2], x.values()[(3 + 2) * 4 + 1]);
        let back = p.permute(&[1, 2, 0]).unwrap();
        assert_eq!(back, x);
        assert!(x.permute(&[0, 0, 1]).is_err());
    }

    #[test]
    fn narrow_and_concat_are_inverse() {
        let x = Tensor::new([3, 4], (0..12).map(f64::from).collect()).unwrap();
        let a = x.narrow(1, 0, 1).unwrap();
        let b = x.narrow(1, 1, 3).unwrap();
        assert_eq!(Tensor::concat(&[&a, &b], 1).unwrap(), x);
        assert!(x.narrow(0, 2, 2).is_err());
    }

    #[test]
    fn concat_gradients_split_back() {
        let tape = Tape::new();
        let a = tape.leaf(&Tensor::from_vec(vec![1.0, 2.0]));
        let b = tape.leaf(&Tensor::from_vec(vec![3.0]));
        let c = Tensor::concat(&[&a, &b], 0).unwrap();
        let w = Tensor::from_vec(vec![10.0, 20.0, 30.0]);
        tape.backward(&c.mul(&w).unwrap().sum()).unwrap();
        assert_eq!(a.grad().unwrap().to_vec(), vec![10.0, 20.0]);
        assert_eq!(b.grad().unwrap().to_vec(), vec![30.0]);
    }

    #[test]
    fn rotate_pairs_is_isometric() {
        let x = Tensor::from_vec(vec![1.0, 2.0, -3.0, 0.5]).reshape([1, 4]).unwrap();
        let y = x.rotate_pairs(&[0.3, -1.1]).unwrap();
        assert!((x.norm() - y.norm()).abs() < 1e-14);
        let z = x.rotate_pairs(&[0.0, 0.0]).unwrap();
        assert_eq!(z, x);
    }

    #[test]
    fn pool_then_upsample_preserves_constants() {
        let x = Tensor::full([2, 8, 8], 0.25);
        let p = x.avg_pool2d(8, 8).unwrap();
        assert_eq!(p.shape(), &[2, 1, 1]);
        assert_eq!(p.upsample2d(8, 8).unwrap(), x);
    }
}
