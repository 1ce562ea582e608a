//! Portable compute kernels behind every registered routine.
//!
//! Float kernels are generic over [`Scalar`](crate::scalar::Scalar); the
//! runtime instantiates them with `f32`. Work splitting is controlled by a
//! `task_ops` granularity (multiply-adds per task) and never changes results.

pub mod conv;
pub mod dense;
pub mod ops;
pub mod quant;
pub mod winograd;

use thiserror::Error;

use crate::tensor::TensorError;

pub use conv::{conv2_direct, ConvTuning};
pub use dense::{dense_childnet, matvec};
pub use quant::{adapt_dequantize, adapt_quantize, conv2_qint8, dense_qint8, requantize};
pub use winograd::{conv2_winograd, WinogradTransform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unsupported configuration: {0}")]
    UnsupportedConfig(String),
    #[error("missing or invalid quantization scale: {0}")]
    MissingScale(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Number of rows handed to one task so each task does about `task_ops` work.
pub(crate) fn rows_per_task(work_per_row: usize, task_ops: usize) -> usize {
    if work_per_row == 0 {
        return 1;
    }
    (task_ops / work_per_row).max(1)
}
