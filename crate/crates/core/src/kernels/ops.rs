//! Element-wise and shape operators.

use super::KernelError;
use crate::graph::PoolParams;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
}

/// Valid-window max pooling over NHWC data of any ordered element type.
pub(crate) fn pool_max<E: Copy + PartialOrd>(
    data: &[E],
    shape: &[usize],
    p: &PoolParams,
) -> Result<(Shape, Vec<E>), KernelError> {
    let &[n, h, w, c] = shape else {
        return Err(KernelError::ShapeMismatch(format!("maxpool2 needs NHWC, got {shape:?}")));
    };
    let ((ph, pw), (sy, sx)) = (p.pool, p.strides);
    if ph == 0 || pw == 0 || sy == 0 || sx == 0 {
        return Err(KernelError::UnsupportedConfig("zero pool size or stride".into()));
    }
    if ph > h || pw > w {
        return Err(KernelError::ShapeMismatch(format!(
            "pool window {ph}x{pw} larger than {h}x{w}"
        )));
    }
    let (oh, ow) = ((h - ph) / sy + 1, (w - pw) / sx + 1);
    let mut out = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let at = |y: usize, x: usize| data[((b * h + oy * sy + y) * w + ox * sx + x) * c + ch];
                    let mut best = at(0, 0);
                    for y in 0..ph {
                        for x in 0..pw {
                            let v = at(y, x);
                            if v > best {
                                best = v;
                            }
                        }
                    }
                    out.push(best);
                }
            }
        }
    }
    Ok((vec![n, oh, ow, c], out))
}

pub fn maxpool2<T: Scalar>(x: &Tensor<T>, p: &PoolParams) -> Result<Tensor<T>, KernelError> {
    let (shape, data) = pool_max(x.data(), x.shape(), p)?;
    Ok(Tensor::new(shape, data)?)
}

/// Numerically stable softmax along the last axis.
pub fn softmax<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>, KernelError> {
    let last = *x
        .shape()
        .last()
        .ok_or_else(|| KernelError::ShapeMismatch("softmax of a scalar".into()))?;
    let mut out = x.data().to_vec();
    if last > 0 {
        for row in out.chunks_mut(last) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
    }
    Ok(Tensor::new(x.shape().to_vec(), out)?)
}

pub fn add<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>, KernelError> {
    let Some((first, rest)) = xs.split_first() else {
        return Err(KernelError::ShapeMismatch("add of zero operands".into()));
    };
    let mut out = first.data().to_vec();
    for t in rest {
        if t.shape() != first.shape() {
            return Err(KernelError::ShapeMismatch(format!(
                "add operands {:?} and {:?}",
                first.shape(),
                t.shape()
            )));
        }
        for (o, &v) in out.iter_mut().zip(t.data()) {
            *o += v;
        }
    }
    Ok(Tensor::new(first.shape().to_vec(), out)?)
}

pub fn flatten<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.clone().reshaped(vec![x.len()]).expect("same element count")
}

pub fn reshape<T: Scalar>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>, KernelError> {
    Ok(x.clone().reshaped(shape.to_vec())?)
}
