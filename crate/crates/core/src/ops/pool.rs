//! 3D max pooling with argmax recording for the backward pass.

use crate::error::{Error, Result};
use crate::ops::conv_out_extent;
use crate::tensor::Tensor;

/// Max over each (kt, kh, kw) window. Returns the pooled tensor and, per
/// output element, the flat index of the winning input element (first
/// occurrence wins ties). No padding; geometry follows the conv formula.
pub fn maxpool3d_forward(
    input: &Tensor,
    kernel: (usize, usize, usize),
    stride: (usize, usize, usize),
) -> Result<(Tensor, Vec<usize>)> {
    let shape = input.shape();
    if shape.len() != 5 {
        return Err(Error::InvalidShape(format!(
            "maxpool3d expects rank-5 input, got {:?}",
            shape
        )));
    }
    let (n_batch, c, t_in, h_in, w_in) = (shape[0], shape[1], shape[2], shape[3], shape[4]);
    let (kt, kh, kw) = kernel;
    let (st, sh, sw) = stride;
    let t_out = conv_out_extent(t_in, kt, st, 0)?;
    let h_out = conv_out_extent(h_in, kh, sh, 0)?;
    let w_out = conv_out_extent(w_in, kw, sw, 0)?;

    let x = input.data();
    let n_out = n_batch * c * t_out * h_out * w_out;
    let mut out = Vec::with_capacity(n_out);
    let mut argmax = Vec::with_capacity(n_out);

    for n in 0..n_batch {
        for ch in 0..c {
            let base = (n * c + ch) * t_in * h_in * w_in;
            for ot in 0..t_out {
                for oh in 0..h_out {
                    for ow in 0..w_out {
                        let mut best = f32::NEG_INFINITY;
                        let mut best_idx = 0;
                        for dt in 0..kt {
                            let it = ot * st + dt;
                            for dh in 0..kh {
                                let ih = oh * sh + dh;
                                for dw in 0..kw {
                                    let iw = ow * sw + dw;
                                    let xi = base + (it * h_in + ih) * w_in + iw;
                                    if x[xi] > best {
                                        best = x[xi];
                                        best_idx = xi;
                                    }
                                }
                            }
                        }
                        out.push(best);
                        argmax.push(best_idx);
                    }
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(&[n_batch, c, t_out, h_out, w_out], out)?,
        argmax,
    ))
}

/// Route each output gradient back to the input element that won its window.
pub fn maxpool3d_backward(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor,
) -> Result<Tensor> {
    if grad_out.len() != argmax.len() {
        return Err(Error::ShapeMismatch(format!(
            "grad_out has {} values, argmax has {}",
            grad_out.len(),
            argmax.len()
        )));
    }
    let mut grad = Tensor::zeros(input_shape)?;
    let gx = grad.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        gx[idx] += g;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool1_preserves_temporal_extent() {
        let input = Tensor::zeros(&[1, 1, 16, 112, 112]).unwrap();
        let (out, _) = maxpool3d_forward(&input, (1, 2, 2), (1, 2, 2)).unwrap();
        assert_eq!(out.shape(), &[1, 1, 16, 56, 56]);
    }

    #[test]
    fn constant_input_stays_constant() {
        let input = Tensor::filled(&[1, 2, 4, 4, 4], 3.25).unwrap();
        let (out, _) = maxpool3d_forward(&input, (2, 2, 2), (2, 2, 2)).unwrap();
        assert!(out.data().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn picks_max_of_window() {
        let input =
            Tensor::from_vec(&[1, 1, 2, 2, 2], (1..=8).map(|v| v as f32).collect()).unwrap();
        let (out, argmax) = maxpool3d_forward(&input, (2, 2, 2), (2, 2, 2)).unwrap();
        assert_eq!(out.data(), &[8.0]);
        assert_eq!(argmax, vec![7]);
    }

    #[test]
    fn backward_routes_to_argmax() {
        let input =
            Tensor::from_vec(&[1, 1, 1, 2, 2], vec![1.0, 4.0, 2.0, 3.0]).unwrap();
        let (_, argmax) = maxpool3d_forward(&input, (1, 2, 2), (1, 2, 2)).unwrap();
        let grad_out = Tensor::from_vec(&[1, 1, 1, 1, 1], vec![5.0]).unwrap();
        let grad = maxpool3d_backward(input.shape(), &argmax, &grad_out).unwrap();
        assert_eq!(grad.data(), &[0.0, 5.0, 0.0, 0.0]);
    }

    #[test]
    fn too_small_input_is_geometry_error() {
        let input = Tensor::zeros(&[1, 1, 1, 2, 2]).unwrap();
        assert!(matches!(
            maxpool3d_forward(&input, (2, 2, 2), (2, 2, 2)),
            Err(Error::Geometry(_))
        ));
    }
}
