use crate::{Error, Result};

pub fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Gradient through ReLU given the pre-activation input. The derivative
/// at exactly zero is taken as zero.
pub fn relu_backward(pre_activation: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    if pre_activation.len() != upstream.len() {
        return Err(Error::shape("relu upstream length differs from its input"));
    }
    Ok(pre_activation
        .iter()
        .zip(upstream)
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect())
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy `-ln p[label]` and its gradient with respect to the
/// logits that produced `probs` (`probs - onehot(label)`).
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= probs.len() {
        return Err(Error::Label {
            label,
            classes: probs.len(),
        });
    }
    let loss = -probs[label].max(f64::MIN_POSITIVE).ln();
    let mut grad = probs.to_vec();
    grad[label] -= 1.0;
    Ok((loss, grad))
}
