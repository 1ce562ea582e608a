use super::conv::{conv2_direct, ConvTuning};
use super::KernelError;
use crate::graph::Conv2Params;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `y[k] = Σ_c x[c]·W[c,k] + b[k]`.
pub fn matvec<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>, KernelError> {
    let (&[c], &[kc, k]) = (x.shape(), kernel.shape()) else {
        return Err(KernelError::ShapeMismatch(format!(
            "dense needs [C] input and [C,K] kernel, got {:?} and {:?}",
            x.shape(),
            kernel.shape()
        )));
    };
    if c != kc {
        return Err(KernelError::ShapeMismatch(format!("kernel expects {kc} inputs, got {c}")));
    }
    super::conv::check_bias(bias, k)?;
    let mut out = vec![T::zero(); k];
    for (ci, &v) in x.data().iter().enumerate() {
        for (o, &w) in out.iter_mut().zip(&kernel.data()[ci * k..][..k]) {
            *o += v * w;
        }
    }
    if let Some(b) = bias {
        for (o, &bv) in out.iter_mut().zip(b.data()) {
            *o += bv;
        }
    }
    Ok(Tensor::new(vec![k], out)?)
}

/// Dense layer evaluated as a 1×1 convolution over a `[1,1,1,C]` blob.
pub fn dense_childnet<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    tuning: ConvTuning,
) -> Result<Tensor<T>, KernelError> {
    let &[c, k] = kernel.shape() else {
        return Err(KernelError::ShapeMismatch(format!("dense kernel {:?}", kernel.shape())));
    };
    let pre = x.clone().reshaped(vec![1, 1, 1, c])?;
    let k4 = kernel.clone().reshaped(vec![1, 1, c, k])?;
    let y = conv2_direct(&pre, &k4, bias, &Conv2Params::default(), tuning)?;
    Ok(y.reshaped(vec![k])?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_matvec() {
        let x = Tensor::new(vec![2], vec![1.0f64, 2.0]).unwrap();
        let w = Tensor::new(vec![2, 3], vec![1.0, 0.0, -1.0, 0.5, 2.0, 1.0]).unwrap();
        let b = Tensor::new(vec![3], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(matvec(&x, &w, Some(&b)).unwrap().data(), &[2.0, 5.0, 1.0]);
        assert_eq!(dense_childnet(&x, &w, Some(&b), ConvTuning::default()).unwrap().data(), &[2.0, 5.0, 1.0]);
    }
}
