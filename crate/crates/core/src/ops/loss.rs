//! Classification losses: cross-entropy on probabilities and L2-regularized
//! hinge loss on raw scores.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const PROB_FLOOR: f64 = 1e-12;

fn check_probs(probs: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    if probs.rank() != 2 {
        return Err(Error::InvalidShape(format!(
            "cross-entropy expects [N, K] probabilities, got {:?}",
            probs.shape()
        )));
    }
    let (n, k) = (probs.shape()[0], probs.shape()[1]);
    if labels.len() != n {
        return Err(Error::Label(format!(
            "{} labels for {} rows",
            labels.len(),
            n
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Label(format!("label {} out of range 0..{}", bad, k)));
    }
    Ok((n, k))
}

/// Mean negative log-likelihood of the true class. Rows must already be
/// normalized probabilities.
pub fn cross_entropy_loss(probs: &Tensor, labels: &[usize]) -> Result<f32> {
    let (n, k) = check_probs(probs, labels)?;
    let mut total = 0.0f64;
    for (row, &label) in probs.data().chunks_exact(k).zip(labels) {
        total -= (row[label] as f64).max(PROB_FLOOR).ln();
    }
    Ok((total / n as f64) as f32)
}

/// dL/dprobs of [`cross_entropy_loss`]: -1 / (N * p_true) at the true class,
/// zero elsewhere. Composed with the softmax Jacobian this reduces to the
/// familiar (p - onehot) / N at the logits.
pub fn cross_entropy_backward(probs: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (n, k) = check_probs(probs, labels)?;
    let mut grad = vec![0.0f32; probs.len()];
    for (row_idx, (row, &label)) in probs.data().chunks_exact(k).zip(labels).enumerate() {
        let p = (row[label] as f64).max(PROB_FLOOR);
        grad[row_idx * k + label] = (-1.0 / (n as f64 * p)) as f32;
    }
    Tensor::from_vec(probs.shape(), grad)
}

/// Mean hinge loss max(0, 1 - y * score) plus the penalty (l2 / 2) * |w|^2.
/// Labels must be -1 or +1.
pub fn hinge_loss(scores: &[f32], labels: &[i32], l2: f32, weights: &Tensor) -> Result<f32> {
    if scores.len() != labels.len() {
        return Err(Error::Label(format!(
            "{} labels for {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput("hinge loss over zero examples".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l != 1 && l != -1) {
        return Err(Error::Label(format!("hinge label {} must be -1 or +1", bad)));
    }
    let mut total = 0.0f64;
    for (&s, &y) in scores.iter().zip(labels) {
        total += (1.0 - y as f64 * s as f64).max(0.0);
    }
    let norm_sq: f64 = weights.data().iter().map(|&w| w as f64 * w as f64).sum();
    Ok((total / scores.len() as f64 + l2 as f64 / 2.0 * norm_sq) as f32)
}
