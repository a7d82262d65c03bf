//! Central finite differences, used as the gradient oracle in tests.

use super::params::ParamVector;
use crate::error::{Error, Result};

/// `(f(x + eps·eᵢ) − f(x − eps·eᵢ)) / (2·eps)` for every coordinate of `at`.
///
/// `f` is evaluated twice at `at` first; any disagreement means the
/// objective is not a pure function of the parameters and the estimate
/// would be meaningless.
pub fn finite_diff_grad<F>(mut f: F, at: &ParamVector, eps: f64) -> Result<ParamVector>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::config(format!("finite-difference step must be positive, got {eps}")));
    }
    let base1 = f(at)?;
    let base2 = f(at)?;
    if base1.to_bits() != base2.to_bits() {
        return Err(Error::Oracle(format!(
            "objective is not deterministic: {base1} then {base2}"
        )));
    }
    let mut grad = ParamVector::zeros_like(at);
    let mut x = at.clone();
    for i in 0..at.len() {
        let orig = x.values()[i];
        x.values_mut()[i] = orig + eps;
        let fp = f(&x)?;
        x.values_mut()[i] = orig - eps;
        let fm = f(&x)?;
        x.values_mut()[i] = orig;
        grad.values_mut()[i] = (fp - fm) / (2.0 * eps);
    }
    Ok(grad)
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`; zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error: length mismatch");
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}
