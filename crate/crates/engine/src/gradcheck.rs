use crate::error::{EngineError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Compares reverse-mode gradients with central differences.
///
/// `f` builds a scalar from its input on a fresh graph. Returns the maximum
/// over coordinates of `|analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(f: F, point: &Tensor<f64>, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(EngineError::InvalidArgument(format!("grad_check: step must be positive, got {step}")));
    }
    if !point.is_finite() {
        return Err(EngineError::NonFinite { op: "grad_check" });
    }
    let mut g = Graph::new();
    let x = g.leaf(point.clone());
    let y = f(&mut g, x)?;
    g.backward(y)?;
    let analytic = g.grad(x).unwrap_or_else(|| Tensor::zeros(point.shape().to_vec()));

    let eval = |t: Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(t);
        let y = f(&mut g, x)?;
        let v = g.value(y);
        v.item().ok_or_else(|| EngineError::NotScalar { shape: v.shape().to_vec() })
    };

    let mut worst = 0.0f64;
    for i in 0..point.numel() {
        let mut plus = point.clone();
        plus.data_mut()[i] += step;
        let mut minus = point.clone();
        minus.data_mut()[i] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        if !numeric.is_finite() {
            return Err(EngineError::NonFinite { op: "grad_check" });
        }
        let err = (analytic.data()[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
