//! Batch normalization over the channel axis of [N, C, ...] tensors.
//!
//! Train mode normalizes by batch statistics taken over every axis except
//! the channel axis and updates the running estimates; infer mode uses the
//! running estimates. Statistics are accumulated in f64 in a fixed order,
//! so results do not depend on the thread count.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub channels: usize,
    pub eps: f32,
    /// Running-stat update: r = momentum * r + (1 - momentum) * batch.
    pub momentum: f32,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

/// Saved by the train-mode forward pass for the backward pass.
pub struct BnCache {
    x_hat: Tensor,
    inv_std: Vec<f32>,
    reduce_len: usize,
}

pub struct BnGrads {
    pub grad_input: Tensor,
    pub grad_gamma: Tensor,
    pub grad_beta: Tensor,
}

/// Decompose a [N, C, ...] shape into (N, C, inner) with inner = product of
/// the remaining extents.
fn layout(shape: &[usize], channels: usize) -> Result<(usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::InvalidShape(format!(
            "batchnorm expects rank >= 2, got {:?}",
            shape
        )));
    }
    if shape[1] != channels {
        return Err(Error::ShapeMismatch(format!(
            "input has {} channels, batchnorm has {}",
            shape[1], channels
        )));
    }
    Ok((shape[0], shape[2..].iter().product::<usize>().max(1)))
}

impl BatchNorm {
    pub fn new(channels: usize, eps: f32, momentum: f32) -> Result<Self> {
        if eps <= 0.0 {
            return Err(Error::InvalidConfig(format!("batchnorm eps {} must be > 0", eps)));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidConfig(format!(
                "batchnorm momentum {} must be in [0, 1)",
                momentum
            )));
        }
        Ok(BatchNorm {
            channels,
            eps,
            momentum,
            gamma: Tensor::filled(&[channels], 1.0)?,
            beta: Tensor::zeros(&[channels])?,
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::filled(&[channels], 1.0)?,
        })
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    pub fn forward(&mut self, input: &Tensor, mode: BnMode) -> Result<(Tensor, Option<BnCache>)> {
        let (n_batch, inner) = layout(input.shape(), self.channels)?;
        let c = self.channels;
        let x = input.data();
        let mut out = vec![0.0f32; x.len()];

        match mode {
            BnMode::Train => {
                let reduce_len = n_batch * inner;
                let mut x_hat = vec![0.0f32; x.len()];
                let mut inv_std = vec![0.0f32; c];
                for ch in 0..c {
                    let mut sum = 0.0f64;
                    let mut sum_sq = 0.0f64;
                    for n in 0..n_batch {
                        let base = (n * c + ch) * inner;
                        for &v in &x[base..base + inner] {
                            sum += v as f64;
                            sum_sq += (v as f64) * (v as f64);
                        }
                    }
                    let m = reduce_len as f64;
                    let mean = sum / m;
                    let var = (sum_sq / m - mean * mean).max(0.0);
                    let istd = 1.0 / (var + self.eps as f64).sqrt();
                    inv_std[ch] = istd as f32;

                    let g = self.gamma.data()[ch];
                    let b = self.beta.data()[ch];
                    for n in 0..n_batch {
                        let base = (n * c + ch) * inner;
                        for i in base..base + inner {
                            let xh = ((x[i] as f64 - mean) * istd) as f32;
                            x_hat[i] = xh;
                            out[i] = g * xh + b;
                        }
                    }

                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = self.momentum * *rm + (1.0 - self.momentum) * mean as f32;
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = self.momentum * *rv + (1.0 - self.momentum) * var as f32;
                }
                Ok((
                    Tensor::from_vec(input.shape(), out)?,
                    Some(BnCache {
                        x_hat: Tensor::from_vec(input.shape(), x_hat)?,
                        inv_std,
                        reduce_len,
                    }),
                ))
            }
            BnMode::Infer => {
                for ch in 0..c {
                    let mean = self.running_mean.data()[ch];
                    let istd = 1.0 / (self.running_var.data()[ch] + self.eps).sqrt();
                    let g = self.gamma.data()[ch];
                    let b = self.beta.data()[ch];
                    for n in 0..n_batch {
                        let base = (n * c + ch) * inner;
                        for i in base..base + inner {
                            out[i] = g * (x[i] - mean) * istd + b;
                        }
                    }
                }
                Ok((Tensor::from_vec(input.shape(), out)?, None))
            }
        }
    }

    /// Train-mode backward through the batch statistics.
    pub fn backward(&self, cache: &BnCache, grad_out: &Tensor) -> Result<BnGrads> {
        let (n_batch, inner) = layout(grad_out.shape(), self.channels)?;
        if grad_out.shape() != cache.x_hat.shape() {
            return Err(Error::ShapeMismatch(format!(
                "bn grad {:?} vs cached {:?}",
                grad_out.shape(),
                cache.x_hat.shape()
            )));
        }
        let c = self.channels;
        let m = cache.reduce_len as f64;
        let go = grad_out.data();
        let xh = cache.x_hat.data();

        let mut grad_gamma = vec![0.0f32; c];
        let mut grad_beta = vec![0.0f32; c];
        let mut grad_input = vec![0.0f32; go.len()];

        for ch in 0..c {
            let mut sum_g = 0.0f64;
            let mut sum_gx = 0.0f64;
            for n in 0..n_batch {
                let base = (n * c + ch) * inner;
                for i in base..base + inner {
                    sum_g += go[i] as f64;
                    sum_gx += go[i] as f64 * xh[i] as f64;
                }
            }
            grad_beta[ch] = sum_g as f32;
            grad_gamma[ch] = sum_gx as f32;

            let scale = self.gamma.data()[ch] as f64 * cache.inv_std[ch] as f64 / m;
            for n in 0..n_batch {
                let base = (n * c + ch) * inner;
                for i in base..base + inner {
                    let g = go[i] as f64;
                    grad_input[i] = (scale * (m * g - sum_g - xh[i] as f64 * sum_gx)) as f32;
                }
            }
        }

        Ok(BnGrads {
            grad_input: Tensor::from_vec(grad_out.shape(), grad_input)?,
            grad_gamma: Tensor::from_vec(&[c], grad_gamma)?,
            grad_beta: Tensor::from_vec(&[c], grad_beta)?,
        })
    }
}
