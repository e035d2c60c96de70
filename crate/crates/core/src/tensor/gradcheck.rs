use super::{Result, Tape, Tensor, TensorError};

/// Outcome of comparing autodiff gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max relative error per parameter tensor.
    pub per_param: Vec<f64>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Relative error with a small absolute floor so exactly-zero gradients
/// don't blow the ratio up.
fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Checks `f`'s reverse-mode gradient w.r.t. every element of `params`
/// against `(f(p+h) - f(p-h)) / 2h`.
///
/// `f` receives the parameters (bound to a tape for the analytic pass, plain
/// for the numeric passes) and must return a scalar.
pub fn grad_check(
    f: impl Fn(&[Tensor]) -> Result<Tensor>,
    params: &[Tensor],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    if h <= 0.0 {
        return Err(TensorError::Contract(format!("grad_check: step h={h} must be positive")));
    }
    let tape = Tape::new();
    let bound: Vec<Tensor> = params.iter().map(|p| tape.leaf(p)).collect();
    let loss = f(&bound)?;
    if !loss.all_finite() {
        return Err(TensorError::Contract("grad_check: loss is not finite".into()));
    }
    tape.backward(&loss)?;

    let mut per_param = Vec::with_capacity(params.len());
    for (pi, p) in params.iter().enumerate() {
        let analytic = bound[pi].grad().map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; p.len()]);
        let mut worst: f64 = 0.0;
        for j in 0..p.len() {
            let eval = |delta: f64| -> Result<f64> {
                let mut shifted = params.to_vec();
                let mut v = p.to_vec();
                v[j] += delta;
                shifted[pi] = Tensor::new(p.shape().to_vec(), v)?;
                Ok(f(&shifted)?.item())
            };
            let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
            if !numeric.is_finite() || !analytic[j].is_finite() {
                return Err(TensorError::Contract(format!(
                    "grad_check: non-finite gradient for param {pi} element {j} \
                     (analytic {}, numeric {numeric})",
                    analytic[j]
                )));
            }
            worst = worst.max(rel_error(analytic[j], numeric));
        }
        per_param.push(worst);
    }
    let max_rel_error = per_param.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport { per_param, max_rel_error, tol, passed: max_rel_error < tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_function_is_exact() {
        let w = Tensor::from_vec(vec![0.3, -1.2, 2.0]);
        let c = Tensor::from_vec(vec![1.5, 2.5, -0.5]);
        let rep = grad_check(|p| Ok(p[0].mul(&c)?.sum()), &[w], 1e-5, 1e-9).unwrap();
        assert!(rep.max_rel_error < 1e-9, "{rep:?}");
    }

    #[test]
    fn rejects_bad_step() {
        assert!(grad_check(|p| Ok(p[0].sum()), &[Tensor::zeros([1])], 0.0, 1.0).is_err());
    }

    #[test]
    fn non_finite_is_diagnosed() {
        let x = Tensor::from_vec(vec![-1.0]);
        let err = grad_check(|p| Ok(p[0].sqrt().sum()), &[x], 1e-5, 1e-4).unwrap_err();
        assert!(err.to_string().contains("not finite"));
    }

    fn softmax_xent(p: &[Tensor]) -> Result<Tensor> {
        // logits [4,3] -> softmax rows -> -log p[target]
        let probs = p[0].softmax(1)?;
        let onehot = Tensor::new([4, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1., 0., 1., 0.])?;
        Ok(probs.ln().mul(&onehot)?.sum().scale(-0.25))
    }

    #[test]
    fn softmax_cross_entropy_error_decays_quadratically() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = Tensor::uniform([4, 3], -2.0, 2.0, &mut rng);
        let coarse = grad_check(softmax_xent, std::slice::from_ref(&logits), 1e-2, 1.0).unwrap();
        let fine = grad_check(softmax_xent, std::slice::from_ref(&logits), 1e-3, 1.0).unwrap();
        // 10x smaller h => ~100x smaller truncation error
        assert!(fine.max_rel_error < coarse.max_rel_error / 50.0, "{coarse:?} {fine:?}");
        let rep = grad_check(softmax_xent, &[logits], 1e-5, 1e-4).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn wrong_backward_rule_is_caught() {
        let x = Tensor::from_vec(vec![0.4, -0.7, 1.3]);
        // derivative of sin deliberately reported as sin
        let rep = grad_check(|p| Ok(p[0].map_with_grad("bad_sin", f64::sin, f64::sin).sum()), &[x], 1e-5, 1e-4)
            .unwrap();
        assert!(!rep.passed);
        assert!(rep.max_rel_error > 1e-1);
    }
}
