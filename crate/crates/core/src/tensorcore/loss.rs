use super::activation::{sigmoid_scalar, softmax};
use crate::error::{Error, Result};

/// Softmax cross-entropy against a gold class index, computed with
/// log-sum-exp. Returns `(loss, d loss / d logits)`.
pub fn cross_entropy(logits: &[f64], gold: usize) -> Result<(f64, Vec<f64>)> {
    if gold >= logits.len() {
        return Err(Error::Dim {
            expected: logits.len(),
            got: gold,
            context: "cross-entropy gold index",
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[gold];
    let mut grad = softmax(logits);
    grad[gold] -= 1.0;
    Ok((loss, grad))
}

/// Sigmoid binary cross-entropy averaged over components.
/// Returns `(loss, d loss / d logits)`.
pub fn bce(logits: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    same_len(logits.len(), targets.len(), "bce targets")?;
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &t) in logits.iter().zip(targets) {
        // log(1 + e^z) - t z, stable for both signs of z
        loss += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
        grad.push((sigmoid_scalar(z) - t) / n);
    }
    Ok((loss / n, grad))
}

/// Mean squared error `(1/D) sum (target - pred)^2`.
/// Returns `(loss, d loss / d pred)`.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    same_len(pred.len(), target.len(), "mse target")?;
    let n = pred.len() as f64;
    let loss = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (t - p) * (t - p))
        .sum::<f64>()
        / n;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| 2.0 * (p - t) / n)
        .collect();
    Ok((loss, grad))
}

fn same_len(expected: usize, got: usize, context: &'static str) -> Result<()> {
    if expected != got {
        return Err(Error::Dim {
            expected,
            got,
            context,
        });
    }
    Ok(())
}
