//! ReLU and row softmax.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn relu_forward(input: &Tensor) -> Tensor {
    Tensor::from_vec(
        input.shape(),
        input.data().iter().map(|&v| v.max(0.0)).collect(),
    )
    .expect("shape preserved")
}

/// Gradient mask by the sign of the forward input; the kink at 0 takes
/// derivative 0.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch(format!(
            "relu grad {:?} vs input {:?}",
            grad_out.shape(),
            input.shape()
        )));
    }
    Tensor::from_vec(
        input.shape(),
        input
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect(),
    )
}

/// Row-wise softmax over an [N, K] tensor, stabilized by max subtraction.
/// Each output row is non-negative and sums to 1.
pub fn softmax(input: &Tensor) -> Result<Tensor> {
    if input.rank() != 2 {
        return Err(Error::InvalidShape(format!(
            "softmax expects [N, K], got {:?}",
            input.shape()
        )));
    }
    let k = input.shape()[1];
    let mut out = Vec::with_capacity(input.len());
    for row in input.data().chunks_exact(k) {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f64> = row.iter().map(|&v| ((v - max) as f64).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|&e| (e / sum) as f32));
    }
    Tensor::from_vec(input.shape(), out)
}

/// Jacobian-vector product of softmax: dz_j = p_j * (g_j - sum_k g_k p_k).
pub fn softmax_backward(probs: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if probs.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch(format!(
            "softmax grad {:?} vs probs {:?}",
            grad_out.shape(),
            probs.shape()
        )));
    }
    let k = probs.shape()[1];
    let mut out = Vec::with_capacity(probs.len());
    for (p_row, g_row) in probs
        .data()
        .chunks_exact(k)
        .zip(grad_out.data().chunks_exact(k))
    {
        let dot: f64 = p_row
            .iter()
            .zip(g_row)
            .map(|(&p, &g)| p as f64 * g as f64)
            .sum();
        out.extend(
            p_row
                .iter()
                .zip(g_row)
                .map(|(&p, &g)| (p as f64 * (g as f64 - dot)) as f32),
        );
    }
    Tensor::from_vec(probs.shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn relu_definition() {
        let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_identity_on_non_negative() {
        let x = Tensor::fill_uniform(&[20], 0.0, 5.0, &mut Rng::new(2)).unwrap();
        assert_eq!(relu_forward(&x).data(), x.data());
    }

    #[test]
    fn softmax_uniform_row() {
        let x = Tensor::filled(&[1, 4], 0.7).unwrap();
        let p = softmax(&x).unwrap();
        for &v in p.data() {
            assert!((v - 0.25).abs() <= 1e-7);
        }
    }

    #[test]
    fn softmax_hand_value() {
        // [0, ln 3] -> [1, 3] / 4
        let x = Tensor::from_vec(&[1, 2], vec![0.0, 3.0f32.ln()]).unwrap();
        let p = softmax(&x).unwrap();
        assert!((p.data()[0] - 0.25).abs() <= 1e-6);
        assert!((p.data()[1] - 0.75).abs() <= 1e-6);
    }

    #[test]
    fn softmax_large_inputs_stable() {
        let x = Tensor::from_vec(&[1, 2], vec![1000.0, 1000.0]).unwrap();
        let p = softmax(&x).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::fill_uniform(&[6, 9], -8.0, 8.0, &mut Rng::new(77)).unwrap();
        let p = softmax(&x).unwrap();
        for row in p.data().chunks_exact(9) {
            let s: f64 = row.iter().map(|&v| v as f64).sum();
            assert!((s - 1.0).abs() <= 1e-6, "row sum {}", s);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
