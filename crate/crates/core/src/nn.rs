//! Parameter containers, a small MLP velocity model and the model trait the
//! trainer, sampler and reward loop are written against.

use std::sync::Arc;

use crate::error::{config, Result};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor};

/// Named, ordered parameter tensors (values only; never recorded).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t.stop_gradient());
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar parameter count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn set(&mut self, i: usize, t: Tensor) -> Result<()> {
        if t.shape() != self.tensors[i].shape() {
            return Err(config(format!(
                "parameter {} expects shape {:?}, got {:?}",
                self.names[i],
                self.tensors[i].shape(),
                t.shape()
            )));
        }
        self.tensors[i] = t.stop_gradient();
        Ok(())
    }

    /// Parameters as tape leaves, or as plain values when `tape` is `None`.
    pub fn bind(&self, tape: Option<&Tape>) -> Vec<Tensor> {
        match tape {
            Some(tape) => self.tensors.iter().map(|t| tape.leaf(t)).collect(),
            None => self.tensors.clone(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.values().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.numel() {
            return Err(config(format!("flat vector has {} values, expected {}", flat.len(), self.numel())));
        }
        let mut off = 0;
        for t in self.tensors.iter_mut() {
            let n = t.len();
            *t = Tensor::new(t.shape().to_vec(), flat[off..off + n].to_vec())?;
            off += n;
        }
        Ok(())
    }
}

/// Gradients of bound parameters after `backward`; zeros where nothing flowed.
pub fn collect_grads(bound: &[Tensor]) -> Vec<Tensor> {
    bound.iter().map(|p| p.grad().unwrap_or_else(|| Tensor::zeros(p.shape().to_vec()))).collect()
}

pub fn flatten(ts: &[Tensor]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.values().iter().copied()).collect()
}

/// A velocity field `v(x, t, cond)` with trainable parameters.
///
/// `x` carries a leading batch axis, `t` holds one time per batch row and
/// `cond` is `[batch, cond_dim]`.
pub trait VelocityModel {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn cond_dim(&self) -> usize;
    fn velocity(&self, params: &[Tensor], x: &Tensor, t: &[f64], cond: &Tensor) -> Result<Tensor>;
}

pub(crate) fn init_weight(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    Tensor::randn([fan_in, fan_out], (1.0 / fan_in as f64).sqrt(), rng)
}

/// `x @ w + b` for `x: [n, in]`.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(x.matmul(w)?.add_last(b)?)
}

/// Fourier features of per-row times: `[t, sin(πf t), cos(πf t)...]`.
pub fn time_features(t: &[f64], n_freq: usize) -> Tensor {
    let width = 1 + 2 * n_freq;
    let mut v = Vec::with_capacity(t.len() * width);
    for &ti in t {
        v.push(ti);
        for k in 0..n_freq {
            let w = std::f64::consts::PI * (1u64 << k) as f64;
            v.push((w * ti).sin());
            v.push((w * ti).cos());
        }
    }
    Tensor::new([t.len(), width], v).expect("time feature shape")
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MlpConfig {
    pub data_dim: usize,
    pub hidden: usize,
    pub depth: usize,
    pub time_freqs: usize,
    pub cond_dim: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { data_dim: 2, hidden: 64, depth: 2, time_freqs: 4, cond_dim: 0 }
    }
}

/// Flat-vector velocity model: `[x, time features, cond] -> SiLU MLP -> v`.
#[derive(Clone, Debug)]
pub struct MlpVelocity {
    pub config: MlpConfig,
    params: ParamSet,
}

impl MlpVelocity {
    pub fn new(cfg: MlpConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.data_dim == 0 || cfg.hidden == 0 || cfg.depth == 0 {
            return Err(config("mlp dimensions must be positive"));
        }
        let config = cfg;
        let mut params = ParamSet::new();
        let mut fan_in = config.data_dim + 1 + 2 * config.time_freqs + config.cond_dim;
        for l in 0..config.depth {
            params.push(format!("w{l}"), init_weight(fan_in, config.hidden, rng));
            params.push(format!("b{l}"), Tensor::zeros([config.hidden]));
            fan_in = config.hidden;
        }
        params.push("w_out", init_weight(fan_in, config.data_dim, rng).scale(0.1));
        params.push("b_out", Tensor::zeros([config.data_dim]));
        Ok(Self { config, params })
    }
}

impl VelocityModel for MlpVelocity {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn cond_dim(&self) -> usize {
        self.config.cond_dim
    }

    fn velocity(&self, p: &[Tensor], x: &Tensor, t: &[f64], cond: &Tensor) -> Result<Tensor> {
        let b = x.shape()[0];
        if x.shape() != [b, self.config.data_dim] || t.len() != b {
            return Err(crate::Error::Shape(format!(
                "mlp expects x [{b}, {}] with {b} times, got {:?} and {} times",
                self.config.data_dim,
                x.shape(),
                t.len()
            )));
        }
        let tf = time_features(t, self.config.time_freqs);
        let mut h = if self.config.cond_dim > 0 {
            Tensor::concat(&[x, &tf, cond], 1)?
        } else {
            Tensor::concat(&[x, &tf], 1)?
        };
        for l in 0..self.config.depth {
            h = linear(&h, &p[2 * l], &p[2 * l + 1])?.silu();
        }
        let d = self.config.depth;
        linear(&h, &p[2 * d], &p[2 * d + 1])
    }
}

type FieldFn = dyn Fn(&[Tensor], &Tensor, &[f64], &Tensor) -> Result<Tensor> + Send + Sync;

/// Velocity model backed by a closure; handy for analytic fields.
#[derive(Clone)]
pub struct FnModel {
    params: ParamSet,
    cond_dim: usize,
    f: Arc<FieldFn>,
}

impl FnModel {
    pub fn new(
        params: ParamSet,
        f: impl Fn(&[Tensor], &Tensor, &[f64], &Tensor) -> Result<Tensor> + Send + Sync + 'static,
    ) -> Self {
        Self { params, cond_dim: 0, f: Arc::new(f) }
    }

    pub fn with_cond_dim(mut self, d: usize) -> Self {
        self.cond_dim = d;
        self
    }
}

impl VelocityModel for FnModel {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    fn velocity(&self, p: &[Tensor], x: &Tensor, t: &[f64], cond: &Tensor) -> Result<Tensor> {
        (self.f)(p, x, t, cond)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::tensor::grad_check;

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut rng = seeded(11);
        let cfg = MlpConfig { data_dim: 3, hidden: 5, depth: 2, time_freqs: 2, cond_dim: 2 };
        let model = MlpVelocity::new(cfg, &mut rng).unwrap();
        let x = Tensor::uniform([4, 3], -2.0, 2.0, &mut rng);
        let cond = Tensor::uniform([4, 2], -2.0, 2.0, &mut rng);
        let target = Tensor::uniform([4, 3], -2.0, 2.0, &mut rng);
        let t = [0.1, 0.4, 0.7, 0.9];
        let rep = grad_check(
            |p| {
                let v = model.velocity(p, &x, &t, &cond).map_err(|e| crate::TensorError::Contract(e.to_string()))?;
                Ok(v.sub(&target)?.square().mean())
            },
            model.params().tensors(),
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = seeded(1);
        let mut m = MlpVelocity::new(MlpConfig::default(), &mut rng).unwrap();
        let flat = m.params().flat();
        let before = m.params().clone();
        m.params_mut().set_flat(&flat).unwrap();
        assert_eq!(&before, m.params());
        assert!(m.params_mut().set_flat(&flat[1..]).is_err());
    }
}
