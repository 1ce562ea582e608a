//! Symmetric per-tensor int8 kernels.
//!
//! Every qint8 kernel takes the scale of the slot it writes; results are
//! requantized with `q = clamp(round(real / scale), -127, 127)`.

use rayon::prelude::*;

use super::conv::{check_bias, conv_geometry};
use super::ops::pool_max;
use super::{rows_per_task, KernelError};
use crate::graph::{Conv2Params, PoolParams};
use crate::scalar::round_half_away;
use crate::tensor::{saturate, QTensor, Tensor, QMAX};

fn check_scale(scale: f32) -> Result<f32, KernelError> {
    if scale > 0.0 && scale.is_finite() {
        Ok(scale)
    } else {
        Err(KernelError::MissingScale(format!("scale {scale} is not positive and finite")))
    }
}

/// Scale that maps the largest magnitude onto 127; 1 for an all-zero tensor.
pub fn max_abs_scale(t: &Tensor<f32>) -> f32 {
    let m = t.max_abs();
    if m > 0.0 && m.is_finite() {
        m / QMAX as f32
    } else {
        1.0
    }
}

#[inline]
fn requant(real: f64, out_scale: f64) -> i8 {
    saturate(round_half_away(real / out_scale) as i64)
}

pub fn adapt_quantize(t: &Tensor<f32>, scale: f32) -> Result<QTensor, KernelError> {
    Ok(QTensor::quantize(t, check_scale(scale)?)?)
}

pub fn adapt_dequantize(q: &QTensor) -> Tensor<f32> {
    q.dequantize()
}

pub fn requantize(q: &QTensor, out_scale: f32) -> Result<QTensor, KernelError> {
    let s = check_scale(out_scale)?;
    if s == q.scale() {
        return Ok(q.clone());
    }
    let (si, so) = (q.scale() as f64, s as f64);
    let data = q.data().iter().map(|&v| requant(v as f64 * si, so)).collect();
    Ok(QTensor::new(q.shape().to_vec(), data, s)?)
}

/// Convolution with i32 accumulation; bias is added in real units.
pub fn conv2_qint8(
    input: &QTensor,
    kernel: &QTensor,
    bias: Option<&Tensor<f32>>,
    p: &Conv2Params,
    out_scale: f32,
    task_ops: usize,
) -> Result<QTensor, KernelError> {
    let so = check_scale(out_scale)? as f64;
    let g = conv_geometry(input.shape(), kernel.shape(), p)?;
    check_bias(bias, g.cout)?;
    let (sy, sx) = p.strides;
    let (dy, dx) = p.dilations;
    let (x, k) = (input.data(), kernel.data());
    let acc_scale = input.scale() as f64 * kernel.scale() as f64;
    let row_len = g.ow * g.cout;
    let mut out = vec![0i8; g.n * g.oh * row_len];
    let rows = rows_per_task(row_len * g.kh * g.kw * g.c, task_ops);
    if row_len > 0 {
        out.par_chunks_mut(rows * row_len).enumerate().for_each(|(chunk, dst)| {
            let mut acc = vec![0i32; g.cout];
            for (r, orow) in dst.chunks_mut(row_len).enumerate() {
                let row = chunk * rows + r;
                let (b, oy) = (row / g.oh, row % g.oh);
                for ox in 0..g.ow {
                    acc.iter_mut().for_each(|a| *a = 0);
                    for ky in 0..g.kh {
                        let iy = (oy * sy + ky * dy) as isize - g.pad_top as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for kx in 0..g.kw {
                            let ix = (ox * sx + kx * dx) as isize - g.pad_left as isize;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            let px = ((b * g.h + iy as usize) * g.w + ix as usize) * g.c;
                            for ci in 0..g.c {
                                let v = x[px + ci] as i32;
                                let kr = &k[((ky * g.kw + kx) * g.c + ci) * g.cout..][..g.cout];
                                for (a, &w) in acc.iter_mut().zip(kr) {
                                    *a += v * w as i32;
                                }
                            }
                        }
                    }
                    for (co, &a) in acc.iter().enumerate() {
                        let real = a as f64 * acc_scale + bias.map_or(0.0, |b| b.data()[co] as f64);
                        orow[ox * g.cout + co] = requant(real, so);
                    }
                }
            }
        });
    }
    Ok(QTensor::new(vec![g.n, g.oh, g.ow, g.cout], out, out_scale)?)
}

pub fn dense_qint8(
    input: &QTensor,
    kernel: &QTensor,
    bias: Option<&Tensor<f32>>,
    out_scale: f32,
) -> Result<QTensor, KernelError> {
    let so = check_scale(out_scale)? as f64;
    let (&[c], &[kc, k]) = (input.shape(), kernel.shape()) else {
        return Err(KernelError::ShapeMismatch(format!(
            "dense needs [C] input and [C,K] kernel, got {:?} and {:?}",
            input.shape(),
            kernel.shape()
        )));
    };
    if c != kc {
        return Err(KernelError::ShapeMismatch(format!("kernel expects {kc} inputs, got {c}")));
    }
    check_bias(bias, k)?;
    let acc_scale = input.scale() as f64 * kernel.scale() as f64;
    let mut acc = vec![0i32; k];
    for (ci, &v) in input.data().iter().enumerate() {
        for (a, &w) in acc.iter_mut().zip(&kernel.data()[ci * k..][..k]) {
            *a += v as i32 * w as i32;
        }
    }
    let data = acc
        .iter()
        .enumerate()
        .map(|(co, &a)| requant(a as f64 * acc_scale + bias.map_or(0.0, |b| b.data()[co] as f64), so))
        .collect();
    Ok(QTensor::new(vec![k], data, out_scale)?)
}

pub fn relu_qint8(q: &QTensor, out_scale: f32) -> Result<QTensor, KernelError> {
    let data = q.data().iter().map(|&v| v.max(0)).collect();
    requantize(&QTensor::new(q.shape().to_vec(), data, q.scale())?, out_scale)
}

pub fn maxpool2_qint8(q: &QTensor, p: &PoolParams, out_scale: f32) -> Result<QTensor, KernelError> {
    let (shape, data) = pool_max(q.data(), q.shape(), p)?;
    requantize(&QTensor::new(shape, data, q.scale())?, out_scale)
}

pub fn reshape_qint8(q: &QTensor, shape: &[usize], out_scale: f32) -> Result<QTensor, KernelError> {
    requantize(&q.clone().reshaped(shape.to_vec())?, out_scale)
}

pub fn add_qint8(xs: &[&QTensor], out_scale: f32) -> Result<QTensor, KernelError> {
    let so = check_scale(out_scale)? as f64;
    let Some(first) = xs.first() else {
        return Err(KernelError::ShapeMismatch("add of zero operands".into()));
    };
    if let Some(bad) = xs.iter().find(|t| t.shape() != first.shape()) {
        return Err(KernelError::ShapeMismatch(format!(
            "add operands {:?} and {:?}",
            first.shape(),
            bad.shape()
        )));
    }
    let data = (0..first.data().len())
        .map(|i| {
            let real: f64 = xs.iter().map(|t| t.data()[i] as f64 * t.scale() as f64).sum();
            requant(real, so)
        })
        .collect();
    Ok(QTensor::new(first.shape().to_vec(), data, out_scale)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::conv::{conv2_direct, ConvTuning};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn requantize_same_scale_is_identity() {
        let q = QTensor::new(vec![3], vec![-127, 3, 127], 0.5).unwrap();
        assert_eq!(requantize(&q, 0.5).unwrap(), q);
        let half = requantize(&q, 1.0).unwrap();
        assert_eq!(half.data(), &[-64, 2, 64]);
    }

    #[test]
    fn bad_scales_rejected() {
        let t = Tensor::<f32>::zeros(vec![2]);
        for s in [0.0, -1.0, f32::NAN, f32::INFINITY] {
            assert!(matches!(adapt_quantize(&t, s), Err(KernelError::MissingScale(_))));
        }
    }

    #[test]
    fn conv_matches_dequantized_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::from_fn(vec![1, 6, 6, 3], |_| rng.gen_range(-1.0f32..1.0));
        let k = Tensor::from_fn(vec![3, 3, 3, 2], |_| rng.gen_range(-1.0f32..1.0));
        let b = Tensor::from_fn(vec![2], |_| rng.gen_range(-1.0f32..1.0));
        let qx = adapt_quantize(&x, max_abs_scale(&x)).unwrap();
        let qk = adapt_quantize(&k, max_abs_scale(&k)).unwrap();
        let p = Conv2Params::default();
        let exact = conv2_direct(&qx.dequantize(), &qk.dequantize(), Some(&b), &p, ConvTuning::default()).unwrap();
        let so = max_abs_scale(&exact);
        let got = conv2_qint8(&qx, &qk, Some(&b), &p, so, 64).unwrap();
        // only the final rounding separates the two
        assert!(got.dequantize().max_abs_diff(&exact) <= so * 0.5 + 1e-5);
    }

    #[test]
    fn dense_and_add_round_trip() {
        let x = QTensor::new(vec![2], vec![10, -20], 0.1).unwrap();
        let w = QTensor::new(vec![2, 1], vec![127, 127], 1.0 / 127.0).unwrap();
        let y = dense_qint8(&x, &w, None, 0.01).unwrap();
        assert_eq!(y.data(), &[-100]);
        let s = add_qint8(&[&x, &x], 0.1).unwrap();
        assert_eq!(s.data(), &[20, -40]);
        let r = relu_qint8(&x, 0.1).unwrap();
        assert_eq!(r.data(), &[10, 0]);
    }
}
