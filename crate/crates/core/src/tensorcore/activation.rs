use super::Rng;
use crate::error::{Error, Result};

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Gradient through relu given the pre-activation input.
pub fn relu_backward(pre: &[f64], upstream: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(upstream)
        .map(|(p, g)| if *p > 0.0 { *g } else { 0.0 })
        .collect()
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| sigmoid_scalar(*v)).collect()
}

/// Gradient through sigmoid given its output.
pub fn sigmoid_backward(out: &[f64], upstream: &[f64]) -> Vec<f64> {
    out.iter()
        .zip(upstream)
        .map(|(s, g)| g * s * (1.0 - s))
        .collect()
}

/// Max-subtracted softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Gradient through softmax given its output: `p * (g - <p, g>)`.
pub fn softmax_backward(out: &[f64], upstream: &[f64]) -> Vec<f64> {
    let dot: f64 = out.iter().zip(upstream).map(|(p, g)| p * g).sum();
    out.iter()
        .zip(upstream)
        .map(|(p, g)| p * (g - dot))
        .collect()
}

/// Inverted-dropout multipliers: each entry is `0` with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    check_rate(rate)?;
    if rate == 0.0 {
        return Ok(vec![1.0; len]);
    }
    let keep = 1.0 / (1.0 - rate);
    Ok((0..len)
        .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
        .collect())
}

/// Inverted dropout. Identity when `training` is false.
pub fn dropout(x: &[f64], rate: f64, rng: &mut Rng, training: bool) -> Result<Vec<f64>> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(x.to_vec());
    }
    let mask = dropout_mask(x.len(), rate, rng)?;
    Ok(x.iter().zip(&mask).map(|(v, m)| v * m).collect())
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} not in [0, 1)")));
    }
    Ok(())
}
