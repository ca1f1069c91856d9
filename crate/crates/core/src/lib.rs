//! Fingerspelling sequence recognition.
//!
//! Three architectures around a shared CTC-trained decoder head:
//! an RGB encoder applying per-sequence adaptive temporal shifts over packed
//! variable-length batches, a keypoint encoder treating pose sequences as
//! 3-channel tensors, and their fusion. Everything numeric is generic over
//! the scalar type; the training pipeline instantiates `f32`, tests mostly
//! `f64`.

pub mod config;
pub mod datamodel;
pub mod decoder;
pub mod error;
pub mod fileio;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod preprocessing;
pub mod rng;
pub mod scalar;
pub mod synthgen;
pub mod tensor;
pub mod tpe;
pub mod train;
pub mod tsam;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Concrete aliases for the two supported scalar types.
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type ParamSet32 = numerics::ParamSet<f32>;
pub type ParamSet64 = numerics::ParamSet<f64>;

/// Scalar type the training pipeline and checkpoints use. Checkpoints store
/// little-endian `f32` blobs, so training in `f32` makes save/load bit-exact.
pub type TrainScalar = f32;
