use rayon::prelude::*;

use super::{rows_per_task, KernelError};
use crate::graph::{Conv2Params, Padding};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Routine parameters of the direct convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvTuning {
    /// Bytes of kernel data touched per output-channel block.
    pub cache: usize,
    /// Multiply-adds per parallel task.
    pub task_ops: usize,
}

impl Default for ConvTuning {
    fn default() -> Self {
        ConvTuning {
            cache: 8192,
            task_ops: 32768,
        }
    }
}

/// Resolved geometry of a 2-D windowed operation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub oh: usize,
    pub ow: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

fn same_pad(size: usize, out: usize, k: usize, stride: usize, dilation: usize) -> usize {
    let span = (k - 1) * dilation + 1;
    let need = (out - 1) * stride + span;
    need.saturating_sub(size) / 2
}

pub(crate) fn conv_geometry(
    input: &[usize],
    kernel: &[usize],
    p: &Conv2Params,
) -> Result<ConvGeometry, KernelError> {
    let (&[n, h, w, c], &[kh, kw, cin, cout]) = (input, kernel) else {
        return Err(KernelError::ShapeMismatch(format!(
            "conv2 needs NHWC input and [kh,kw,cin,cout] kernel, got {input:?} and {kernel:?}"
        )));
    };
    if cin != c {
        return Err(KernelError::ShapeMismatch(format!(
            "kernel has {cin} input channels, input has {c}"
        )));
    }
    let (sy, sx) = p.strides;
    let (dy, dx) = p.dilations;
    if sy == 0 || sx == 0 || dy == 0 || dx == 0 {
        return Err(KernelError::UnsupportedConfig("zero stride or dilation".into()));
    }
    let out = |size: usize, k: usize, s: usize, d: usize| {
        crate::graph::shape::window_out(size, k, s, d, p.padding)
            .ok_or_else(|| KernelError::ShapeMismatch("kernel larger than input".into()))
    };
    let oh = out(h, kh, sy, dy)?;
    let ow = out(w, kw, sx, dx)?;
    let (pad_top, pad_left) = match p.padding {
        Padding::Same => (same_pad(h, oh, kh, sy, dy), same_pad(w, ow, kw, sx, dx)),
        Padding::Valid => (0, 0),
    };
    Ok(ConvGeometry {
        n,
        h,
        w,
        c,
        kh,
        kw,
        cout,
        oh,
        ow,
        pad_top,
        pad_left,
    })
}

pub(crate) fn check_bias<T: Scalar>(bias: Option<&Tensor<T>>, cout: usize) -> Result<(), KernelError> {
    match bias {
        Some(b) if b.shape() != [cout] => Err(KernelError::ShapeMismatch(format!(
            "bias shape {:?}, expected [{cout}]",
            b.shape()
        ))),
        _ => Ok(()),
    }
}

/// Direct cross-correlation, channels-last, with optional bias.
pub fn conv2_direct<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    p: &Conv2Params,
    tuning: ConvTuning,
) -> Result<Tensor<T>, KernelError> {
    let g = conv_geometry(input.shape(), kernel.shape(), p)?;
    check_bias(bias, g.cout)?;
    let (sy, sx) = p.strides;
    let (dy, dx) = p.dilations;
    let x = input.data();
    let k = kernel.data();
    let row_len = g.ow * g.cout;
    let mut out = vec![T::zero(); g.n * g.oh * row_len];
    let block = (tuning.cache / (std::mem::size_of::<T>() * g.kh * g.kw * g.c).max(1)).clamp(1, g.cout.max(1));
    let rows = rows_per_task(row_len * g.kh * g.kw * g.c, tuning.task_ops);

    out.par_chunks_mut(rows * row_len.max(1))
        .enumerate()
        .for_each(|(chunk, dst)| {
            for (r, orow) in dst.chunks_mut(row_len.max(1)).enumerate() {
                let row = chunk * rows + r;
                let (b, oy) = (row / g.oh, row % g.oh);
                for ox in 0..g.ow {
                    let acc = &mut orow[ox * g.cout..(ox + 1) * g.cout];
                    for co0 in (0..g.cout).step_by(block) {
                        let co1 = (co0 + block).min(g.cout);
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
                                    let v = x[px + ci];
                                    let kr = ((ky * g.kw + kx) * g.c + ci) * g.cout;
                                    for co in co0..co1 {
                                        acc[co] += v * k[kr + co];
                                    }
                                }
                            }
                        }
                    }
                    if let Some(bias) = bias {
                        for (a, &bv) in acc.iter_mut().zip(bias.data()) {
                            *a += bv;
                        }
                    }
                }
            }
        });
    Ok(Tensor::new(vec![g.n, g.oh, g.ow, g.cout], out)?)
}
