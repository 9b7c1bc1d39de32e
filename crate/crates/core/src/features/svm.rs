//! Linear SVM trained with Pegasos-style subgradient descent on the
//! L2-regularized hinge objective.

use crate::error::{Error, Result};
use crate::ops::hinge_loss;
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone)]
pub struct LinearSvmModel {
    pub weights: Tensor,
    pub bias: f32,
    pub l2: f32,
    pub epochs_trained: usize,
}

pub struct SvmTrainResult {
    pub model: LinearSvmModel,
    /// Training objective averaged over each epoch's iterations: the mean of
    /// the visited example's hinge term plus the L2 penalty, both at the
    /// weights current when the example was visited.
    pub epoch_objectives: Vec<f32>,
    /// Full-dataset objective of the reported (averaged) model.
    pub final_objective: f32,
}

fn dot(w: &[f32], x: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (&a, &b) in w.iter().zip(x) {
        acc += a * b;
    }
    acc
}

/// Subgradient SGD with the Pegasos step size 1/(l2 * t) and projection onto
/// the ball of radius 1/sqrt(l2). The bias is updated by the hinge
/// subgradient and left unregularized. The reported model is the averaged
/// iterate, which smooths out the jumps single subgradient steps cause.
/// Shuffling is seeded, so training is deterministic.
pub fn svm_train(
    features: &[Tensor],
    labels: &[i32],
    l2: f32,
    epochs: usize,
    rng: &mut Rng,
) -> Result<SvmTrainResult> {
    if features.is_empty() {
        return Err(Error::EmptyInput("no training examples".into()));
    }
    if features.len() != labels.len() {
        return Err(Error::Label(format!(
            "{} labels for {} examples",
            labels.len(),
            features.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y != 1 && y != -1) {
        return Err(Error::Label(format!("label {} must be -1 or +1", bad)));
    }
    if !labels.contains(&1) || !labels.contains(&-1) {
        return Err(Error::DegenerateTraining(
            "need at least one example of each class".into(),
        ));
    }
    if l2 <= 0.0 {
        return Err(Error::InvalidConfig(format!("l2 {} must be > 0", l2)));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.rank() != 1 || f.len() != dim) {
        return Err(Error::ShapeMismatch(format!(
            "features must all be rank-1 vectors of length {}",
            dim
        )));
    }

    let n = features.len();
    let mut w = vec![0.0f32; dim];
    let mut b = 0.0f32;
    let mut w_sum = vec![0.0f64; dim];
    let mut b_sum = 0.0f64;
    let radius = (1.0 / l2 as f64).sqrt();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_objectives = Vec::with_capacity(epochs);
    // offset the 1/(l2 t) schedule so the first step is at most 1: the raw
    // Pegasos steps at tiny l2 are enormous and only add noise
    let t0 = (n as u64).max((1.0 / l2 as f64).ceil() as u64);
    let mut t = t0;

    let mut weight_sum = 0.0f64;
    for _ in 0..epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0f64;
        for &i in &order {
            t += 1;
            let eta = 1.0 / (l2 as f64 * t as f64);
            let x = features[i].data();
            let y = labels[i] as f32;
            let margin = y * (dot(&w, x) + b);
            let norm_sq = dot(&w, &w) as f64;
            epoch_loss += (1.0 - margin as f64).max(0.0) + l2 as f64 / 2.0 * norm_sq;

            let shrink = (1.0 - 1.0 / t as f64) as f32;
            for wv in w.iter_mut() {
                *wv *= shrink;
            }
            if margin < 1.0 {
                let step = (eta as f32) * y;
                for (wv, &xv) in w.iter_mut().zip(x) {
                    *wv += step * xv;
                }
                b += step;
            }
            let norm = dot(&w, &w).sqrt() as f64;
            if norm > radius {
                let scale = (radius / norm) as f32;
                for wv in w.iter_mut() {
                    *wv *= scale;
                }
            }
            // iterate averaging weighted by the step index: later, more
            // settled iterates dominate the reported model
            let wt = (t - t0) as f64;
            for (s, &wv) in w_sum.iter_mut().zip(&w) {
                *s += wt * wv as f64;
            }
            b_sum += wt * b as f64;
            weight_sum += wt;
        }
        epoch_objectives.push((epoch_loss / n as f64) as f32);
    }

    let w_avg: Vec<f32> = w_sum.iter().map(|&s| (s / weight_sum) as f32).collect();
    let b_avg = (b_sum / weight_sum) as f32;
    let weights = Tensor::from_vec(&[dim], w_avg)?;
    let scores: Vec<f32> = features
        .iter()
        .map(|f| dot(weights.data(), f.data()) + b_avg)
        .collect();
    let final_objective = hinge_loss(&scores, labels, l2, &weights)?;

    Ok(SvmTrainResult {
        model: LinearSvmModel {
            weights,
            bias: b_avg,
            l2,
            epochs_trained: epochs,
        },
        epoch_objectives,
        final_objective,
    })
}

/// Sign of w . x + b; a score of exactly 0 classifies as +1.
pub fn svm_predict(model: &LinearSvmModel, x: &Tensor) -> Result<(i32, f32)> {
    if x.rank() != 1 || x.len() != model.weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "input {:?} vs weights [{}]",
            x.shape(),
            model.weights.len()
        )));
    }
    let score = dot(model.weights.data(), x.data()) + model.bias;
    Ok((if score >= 0.0 { 1 } else { -1 }, score))
}
