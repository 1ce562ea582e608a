//! Dense tensors and runtime blobs.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{round_half_away, Scalar};

/// Smallest and largest representable quantized value (symmetric range).
pub const QMIN: i32 = -127;
pub const QMAX: i32 = 127;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Float32,
    Float16,
    Qint8,
}

impl DType {
    pub fn as_str(self) -> &'static str {
        match self {
            DType::Float32 => "float32",
            DType::Float16 => "float16",
            DType::Qint8 => "qint8",
        }
    }

    pub fn parse(s: &str) -> Option<DType> {
        match s {
            "float32" => Some(DType::Float32),
            "float16" => Some(DType::Float16),
            "qint8" => Some(DType::Qint8),
            _ => None,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub type Shape = Vec<usize>;

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("data length {len} does not match shape {shape:?}")]
    LengthMismatch { len: usize, shape: Shape },
    #[error("qint8 blob requires a positive qscale, got {0}")]
    BadScale(f32),
    #[error("expected {expected} blob, found {found}")]
    WrongDType { expected: DType, found: DType },
}

/// Row-major dense tensor over a float scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self, TensorError> {
        if numel(&shape) != data.len() {
            return Err(TensorError::LengthMismatch {
                len: data.len(),
                shape,
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = numel(&shape);
        Tensor {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize) -> T) -> Self {
        let n = numel(&shape);
        Tensor {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Same data, new shape with equal element count.
    pub fn reshaped(self, shape: Shape) -> Result<Self, TensorError> {
        Tensor::new(shape, self.data)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::of(v.to_f64().unwrap_or(0.0)))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| {
                let d = (*a - *b).abs();
                if d > m {
                    d
                } else {
                    m
                }
            })
    }
}

/// Quantized tensor: `real = value * scale`, zero offset.
#[derive(Debug, Clone, PartialEq)]
pub struct QTensor {
    shape: Shape,
    data: Vec<i8>,
    scale: f32,
}

impl QTensor {
    pub fn new(shape: Shape, data: Vec<i8>, scale: f32) -> Result<Self, TensorError> {
        if numel(&shape) != data.len() {
            return Err(TensorError::LengthMismatch {
                len: data.len(),
                shape,
            });
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(TensorError::BadScale(scale));
        }
        Ok(QTensor { shape, data, scale })
    }

    /// Quantize with `q = clamp(round(x / scale), -127, 127)`.
    pub fn quantize(t: &Tensor<f32>, scale: f32) -> Result<Self, TensorError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(TensorError::BadScale(scale));
        }
        let data = t.data().iter().map(|&x| quantize_value(x, scale)).collect();
        Ok(QTensor {
            shape: t.shape().to_vec(),
            data,
            scale,
        })
    }

    pub fn dequantize(&self) -> Tensor<f32> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&q| q as f32 * self.scale).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    pub fn reshaped(self, shape: Shape) -> Result<Self, TensorError> {
        QTensor::new(shape, self.data, self.scale)
    }
}

pub fn quantize_value(x: f32, scale: f32) -> i8 {
    saturate(round_half_away(x / scale) as i64)
}

pub fn saturate(v: i64) -> i8 {
    v.clamp(QMIN as i64, QMAX as i64) as i8
}

/// A runtime value flowing along an edge of the net.
#[derive(Debug, Clone, PartialEq)]
pub enum Blob {
    F32(Tensor<f32>),
    Q8(QTensor),
}

impl Blob {
    pub fn shape(&self) -> &[usize] {
        match self {
            Blob::F32(t) => t.shape(),
            Blob::Q8(q) => q.shape(),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            Blob::F32(_) => DType::Float32,
            Blob::Q8(_) => DType::Qint8,
        }
    }

    pub fn qscale(&self) -> Option<f32> {
        match self {
            Blob::F32(_) => None,
            Blob::Q8(q) => Some(q.scale()),
        }
    }

    pub fn as_f32(&self) -> Result<&Tensor<f32>, TensorError> {
        match self {
            Blob::F32(t) => Ok(t),
            Blob::Q8(_) => Err(TensorError::WrongDType {
                expected: DType::Float32,
                found: DType::Qint8,
            }),
        }
    }

    pub fn as_q8(&self) -> Result<&QTensor, TensorError> {
        match self {
            Blob::Q8(q) => Ok(q),
            Blob::F32(_) => Err(TensorError::WrongDType {
                expected: DType::Qint8,
                found: DType::Float32,
            }),
        }
    }

    /// Real-valued view regardless of dtype.
    pub fn to_f32(&self) -> Tensor<f32> {
        match self {
            Blob::F32(t) => t.clone(),
            Blob::Q8(q) => q.dequantize(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_checked() {
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(QTensor::new(vec![2], vec![0, 0], 0.0).is_err());
    }

    #[test]
    fn quantize_examples() {
        let s = 0.05f32;
        let t = Tensor::new(vec![3], vec![0.0, 100.0 * s, 300.0 * s]).unwrap();
        let q = QTensor::quantize(&t, s).unwrap();
        assert_eq!(q.data(), &[0, 100, 127]);
        assert_eq!(q.dequantize().data()[1], 100.0 * s);
    }
}
