//! Fully connected (affine) layer.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// Weights are [D, K] (input features by output units), bias is [K].
#[derive(Debug, Clone)]
pub struct FcParams {
    pub in_features: usize,
    pub out_features: usize,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl FcParams {
    pub fn new(in_features: usize, out_features: usize, weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.shape() != [in_features, out_features] {
            return Err(Error::ShapeMismatch(format!(
                "fc weights {:?}, expected [{}, {}]",
                weights.shape(),
                in_features,
                out_features
            )));
        }
        if bias.shape() != [out_features] {
            return Err(Error::ShapeMismatch(format!(
                "fc bias {:?}, expected [{}]",
                bias.shape(),
                out_features
            )));
        }
        Ok(FcParams {
            in_features,
            out_features,
            weights,
            bias,
        })
    }

    /// Uniform fan-in init (bound sqrt(1/fan_in)), zero bias.
    pub fn init(in_features: usize, out_features: usize, rng: &mut Rng) -> Result<Self> {
        let bound = (1.0 / in_features as f32).sqrt();
        let weights = Tensor::fill_uniform(&[in_features, out_features], -bound, bound, rng)?;
        let bias = Tensor::zeros(&[out_features])?;
        FcParams::new(in_features, out_features, weights, bias)
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

pub struct FcGrads {
    pub grad_input: Tensor,
    pub grad_weights: Tensor,
    pub grad_bias: Tensor,
}

fn check_input(input: &Tensor, params: &FcParams) -> Result<usize> {
    if input.rank() != 2 {
        return Err(Error::InvalidShape(format!(
            "fc expects [N, D] input, got {:?}",
            input.shape()
        )));
    }
    if input.shape()[1] != params.in_features {
        return Err(Error::ShapeMismatch(format!(
            "fc input dim {} vs weights dim {}",
            input.shape()[1],
            params.in_features
        )));
    }
    Ok(input.shape()[0])
}

/// out[n, k] = bias[k] + sum_d input[n, d] * weights[d, k]
pub fn fc_forward(input: &Tensor, params: &FcParams) -> Result<Tensor> {
    let n_batch = check_input(input, params)?;
    let d = params.in_features;
    let k = params.out_features;
    let x = input.data();
    let w = params.weights.data();
    let b = params.bias.data();

    let mut out = vec![0.0f32; n_batch * k];
    out.par_chunks_mut(k).enumerate().for_each(|(n, orow)| {
        orow.copy_from_slice(b);
        let xrow = &x[n * d..(n + 1) * d];
        for (di, &xv) in xrow.iter().enumerate() {
            let wrow = &w[di * k..(di + 1) * k];
            for (o, &wv) in orow.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
    });
    Tensor::from_vec(&[n_batch, k], out)
}

pub fn fc_backward(input: &Tensor, params: &FcParams, grad_out: &Tensor) -> Result<FcGrads> {
    let n_batch = check_input(input, params)?;
    let d = params.in_features;
    let k = params.out_features;
    if grad_out.shape() != [n_batch, k] {
        return Err(Error::ShapeMismatch(format!(
            "fc grad_out {:?}, expected [{}, {}]",
            grad_out.shape(),
            n_batch,
            k
        )));
    }
    let x = input.data();
    let w = params.weights.data();
    let go = grad_out.data();

    let mut grad_bias = vec![0.0f32; k];
    for grow in go.chunks_exact(k) {
        for (gb, &g) in grad_bias.iter_mut().zip(grow) {
            *gb += g;
        }
    }

    // dW[d, k] = sum_n x[n, d] * go[n, k]
    let mut grad_weights = vec![0.0f32; d * k];
    grad_weights
        .par_chunks_mut(k)
        .enumerate()
        .for_each(|(di, gw_row)| {
            for n in 0..n_batch {
                let xv = x[n * d + di];
                let grow = &go[n * k..(n + 1) * k];
                for (gw, &g) in gw_row.iter_mut().zip(grow) {
                    *gw += xv * g;
                }
            }
        });

    // dX[n, d] = sum_k go[n, k] * w[d, k]
    let mut grad_input = vec![0.0f32; n_batch * d];
    grad_input
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(n, gx_row)| {
            let grow = &go[n * k..(n + 1) * k];
            for (di, gx) in gx_row.iter_mut().enumerate() {
                let wrow = &w[di * k..(di + 1) * k];
                let mut acc = 0.0f32;
                for (&g, &wv) in grow.iter().zip(wrow) {
                    acc += g * wv;
                }
                *gx = acc;
            }
        });

    Ok(FcGrads {
        grad_input: Tensor::from_vec(&[n_batch, d], grad_input)?,
        grad_weights: Tensor::from_vec(&[d, k], grad_weights)?,
        grad_bias: Tensor::from_vec(&[k], grad_bias)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_zero_bias() {
        let mut w = Tensor::zeros(&[3, 3]).unwrap();
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let params = FcParams::new(3, 3, w, Tensor::zeros(&[3]).unwrap()).unwrap();
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0]).unwrap();
        assert_eq!(fc_forward(&x, &params).unwrap().data(), x.data());
    }

    #[test]
    fn hand_computed_affine() {
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap();
        let params = FcParams::new(2, 2, w, b).unwrap();
        let x = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        assert_eq!(fc_forward(&x, &params).unwrap().data(), &[2.0, 3.0]);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let params = FcParams::init(4, 2, &mut Rng::new(1)).unwrap();
        let x = Tensor::zeros(&[1, 3]).unwrap();
        assert!(matches!(
            fc_forward(&x, &params),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn grad_bias_sums_rows() {
        let params = FcParams::init(3, 2, &mut Rng::new(2)).unwrap();
        let x = Tensor::fill_uniform(&[4, 3], -1.0, 1.0, &mut Rng::new(3)).unwrap();
        let go = Tensor::fill_uniform(&[4, 2], -1.0, 1.0, &mut Rng::new(4)).unwrap();
        let grads = fc_backward(&x, &params, &go).unwrap();
        for k in 0..2 {
            let expect: f32 = (0..4).map(|n| go.data()[n * 2 + k]).sum();
            assert!((grads.grad_bias.data()[k] - expect).abs() <= 1e-6);
        }
    }
}
