//! Forward and backward implementations of every primitive layer the two
//! networks need, plus the SGD optimizer and the STM1 checkpoint container.

mod activations;
mod batchnorm;
mod checkpoint;
mod conv3d;
mod linear;
mod loss;
mod pool;
mod sgd;

pub use activations::{relu_backward, relu_forward, softmax, softmax_backward};
pub use batchnorm::{BatchNorm, BnCache, BnGrads, BnMode};
pub use checkpoint::Checkpoint;
pub use conv3d::{conv3d_backward, conv3d_forward, conv3d_forward_naive, Conv3dGrads, Conv3dParams};
pub use linear::{fc_backward, fc_forward, FcGrads, FcParams};
pub use loss::{cross_entropy_backward, cross_entropy_loss, hinge_loss};
pub use pool::{maxpool3d_backward, maxpool3d_forward};
pub use sgd::{DecayUnit, Sgd, SgdConfig};

use crate::error::{Error, Result};

/// Output extent of a strided window op: floor((in + 2p - k) / s) + 1.
/// Errors when the padded input is smaller than the kernel.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(Error::Geometry(format!(
            "kernel {} and stride {} must be >= 1",
            kernel, stride
        )));
    }
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(Error::Geometry(format!(
            "input {} + 2*{} smaller than kernel {}",
            input, pad, kernel
        )));
    }
    Ok((padded - kernel) / stride + 1)
}
