//! Adam and plain gradient steps over a [`ParamSet`].

use crate::error::{config, Result};
use crate::nn::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clip applied before the update, if set.
    pub clip_norm: Option<f64>,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: None, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn with_clip(mut self, max_norm: f64) -> Self {
        self.clip_norm = Some(max_norm);
        self
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(config(format!("{} grads for {} params", grads.len(), params.len())));
        }
        if self.m.is_empty() {
            self.m = params.tensors().iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        let clip = match self.clip_norm {
            Some(max) => {
                let norm = grads.iter().map(|g| g.values().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
                if norm > max { max / norm } else { 1.0 }
            }
            None => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let p = params.get(i);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let mut next = p.to_vec();
            for (j, (&gj, w)) in g.values().iter().zip(next.iter_mut()).enumerate() {
                let gj = gj * clip;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                *w -= self.lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + self.eps);
            }
            params.set(i, Tensor::new(p.shape().to_vec(), next)?)?;
        }
        Ok(())
    }
}

/// `θ ← θ + sign · lr · g` (sign = -1 descends, +1 ascends).
pub fn gradient_step(params: &mut ParamSet, grads: &[Tensor], lr: f64, sign: f64) -> Result<()> {
    if lr == 0.0 {
        return Ok(());
    }
    for (i, g) in grads.iter().enumerate() {
        let p = params.get(i);
        let next = p.values().iter().zip(g.values()).map(|(w, g)| w + sign * lr * g).collect();
        params.set(i, Tensor::new(p.shape().to_vec(), next)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimises_quadratic() {
        let mut ps = ParamSet::new();
        ps.push("w", Tensor::from_vec(vec![3.0, -2.0]));
        let mut opt = Adam::new(0.1);
        for _ in 0..300 {
            let g = Tensor::from_vec(ps.get(0).values().iter().map(|w| 2.0 * w).collect());
            opt.step(&mut ps, &[g]).unwrap();
        }
        assert!(ps.get(0).norm() < 1e-2);
    }

    #[test]
    fn zero_lr_is_bit_identity() {
        let mut ps = ParamSet::new();
        ps.push("w", Tensor::from_vec(vec![0.1, 0.2]));
        let before = ps.clone();
        gradient_step(&mut ps, &[Tensor::from_vec(vec![5.0, 5.0])], 0.0, 1.0).unwrap();
        assert_eq!(before, ps);
    }
}
