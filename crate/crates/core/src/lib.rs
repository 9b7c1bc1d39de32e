//! Spatiotemporal CNN engine.
//!
//! A self-contained CPU implementation of 3D and (2+1)D convolutional
//! networks for video classification: dense tensors, layer primitives with
//! exact gradients, declarative network builders (VGG-style C3D and a
//! 34-layer R(2+1)D residual net), a clip-sampling video pipeline, feature
//! aggregation with a linear SVM head, and a cross-validation /
//! projection / benchmarking harness.

pub mod error;
pub mod eval;
pub mod features;
pub mod net;
pub mod ops;
pub mod tensor;
pub mod video;

pub use error::{Error, Result};
pub use tensor::{Rng, Tensor};
