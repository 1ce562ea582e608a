//! Winograd minimal filtering F(m×m, 3×3) for same-padded, unit-stride convs.
//!
//! The transform matrices are built by Cook-Toom interpolation over exact
//! rationals and only then cast to the working scalar.
//!
//! Blob layouts: the encoder produces `[α², N·tiles, C]`, the element-wise
//! product `[α², N·tiles, K]`, and the decoder restores `[N, H, W, K]`.
//!
//! Stage arithmetic always runs in f64 and the transformed kernel is kept in
//! f64; only the blobs between stages are rounded to the caller's scalar. The
//! fused [`conv2_winograd`] skips that rounding entirely.

use num_rational::Ratio;
use rayon::prelude::*;

use super::conv::check_bias;
use super::{rows_per_task, KernelError};
use crate::graph::{Conv2Params, Padding};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

type Q = Ratio<i128>;

/// Output tile sizes with a defined point set.
pub const SUPPORTED_TILES: [usize; 4] = [2, 4, 6, 8];

/// Tiles needed to cover an `h×w` plane with `m×m` output tiles.
pub fn tile_count(h: usize, w: usize, m: usize) -> usize {
    if m == 0 {
        return 0;
    }
    h.div_ceil(m) * w.div_ceil(m)
}

/// Finite interpolation points; the point at infinity is implicit.
///
/// F(8,3) avoids ±2/±½ in favour of {±4/3, ±5/2, ±2/5}, which had the lowest
/// f32 round-off of the symmetric sets tried with 64 input channels.
fn points(m: usize) -> Option<Vec<Q>> {
    let i = |n: i128| Q::from_integer(n);
    let q = |n: i128, d: i128| Q::new(n, d);
    let base = vec![i(0), i(1), i(-1)];
    let pts = match m {
        2 => base,
        4 => [base, vec![i(2), i(-2)]].concat(),
        6 => [base, vec![i(2), i(-2), q(1, 2), q(-1, 2)]].concat(),
        8 => [base, vec![q(4, 3), q(-4, 3), q(5, 2), q(-5, 2), q(2, 5), q(-2, 5)]].concat(),
        _ => return None,
    };
    debug_assert_eq!(pts.len(), m + 1);
    Some(pts)
}

fn mul_linear(poly: &[Q], p: Q) -> Vec<Q> {
    // poly · (x − p), coefficients lowest degree first
    let mut out = vec![Q::from_integer(0); poly.len() + 1];
    for (n, &c) in poly.iter().enumerate() {
        out[n + 1] += c;
        out[n] -= c * p;
    }
    out
}

/// Exact transform matrices for one output tile size.
#[derive(Debug, Clone, PartialEq)]
pub struct WinogradTransform {
    pub m: usize,
    pub alpha: usize,
    /// `α × m`, row-major.
    a: Vec<Q>,
    /// `α × 3`, row-major.
    g: Vec<Q>,
    /// `α × α`, row-major.
    bt: Vec<Q>,
}

impl WinogradTransform {
    pub const R: usize = 3;

    pub fn alpha_for(m: usize) -> usize {
        m + Self::R - 1
    }

    pub fn new(m: usize) -> Result<Self, KernelError> {
        let pts = points(m).ok_or_else(|| {
            KernelError::UnsupportedConfig(format!(
                "winograd tile size {m} not in {SUPPORTED_TILES:?}"
            ))
        })?;
        let r = Self::R;
        let alpha = Self::alpha_for(m);
        let zero = Q::from_integer(0);
        let one = Q::from_integer(1);
        let pow = |p: Q, e: usize| (0..e).fold(one, |acc, _| acc * p);

        let mut a = vec![zero; alpha * m];
        let mut g = vec![zero; alpha * r];
        let mut bt = vec![zero; alpha * alpha];
        for (j, &pj) in pts.iter().enumerate() {
            let mut mj = vec![one];
            let mut fj = one;
            for (l, &pl) in pts.iter().enumerate() {
                if l != j {
                    mj = mul_linear(&mj, pl);
                    fj *= pj - pl;
                }
            }
            for i in 0..m {
                a[j * m + i] = pow(pj, i);
            }
            for k in 0..r {
                g[j * r + k] = pow(pj, k) / fj;
            }
            for (n, &c) in mj.iter().enumerate() {
                bt[j * alpha + n] = c;
            }
        }
        let inf = alpha - 1;
        a[inf * m + m - 1] = one;
        g[inf * r + r - 1] = one;
        let full = pts.iter().fold(vec![one], |poly, &p| mul_linear(&poly, p));
        for (n, &c) in full.iter().enumerate() {
            bt[inf * alpha + n] = c;
        }
        Ok(WinogradTransform { m, alpha, a, g, bt })
    }

    fn cast<T: Scalar>(v: &[Q]) -> Vec<T> {
        v.iter()
            .map(|q| T::of(*q.numer() as f64 / *q.denom() as f64))
            .collect()
    }

    pub fn a<T: Scalar>(&self) -> Vec<T> {
        Self::cast(&self.a)
    }

    pub fn g<T: Scalar>(&self) -> Vec<T> {
        Self::cast(&self.g)
    }

    pub fn bt<T: Scalar>(&self) -> Vec<T> {
        Self::cast(&self.bt)
    }

    /// Exact 1-D correlation `y_i = Σ_k g_k d_{i+k}` through the transform;
    /// used to check the construction without rounding.
    pub fn correlate_exact(&self, g: &[Q], d: &[Q]) -> Vec<Q> {
        let (r, alpha, m) = (Self::R, self.alpha, self.m);
        let zero = Q::from_integer(0);
        let prod: Vec<Q> = (0..alpha)
            .map(|j| {
                let gg = (0..r).fold(zero, |s, k| s + self.g[j * r + k] * g[k]);
                let dd = (0..alpha).fold(zero, |s, n| s + self.bt[j * alpha + n] * d[n]);
                gg * dd
            })
            .collect();
        (0..m)
            .map(|i| (0..alpha).fold(zero, |s, j| s + self.a[j * m + i] * prod[j]))
            .collect()
    }
}

/// Per-scalar copy of the matrices used by the kernels.
struct Mats<T> {
    alpha: usize,
    a: Vec<T>,
    g: Vec<T>,
    bt: Vec<T>,
}

impl<T: Scalar> Mats<T> {
    fn new(m: usize) -> Result<Self, KernelError> {
        let t = WinogradTransform::new(m)?;
        Ok(Mats {
            alpha: t.alpha,
            a: t.a(),
            g: t.g(),
            bt: t.bt(),
        })
    }
}

/// Transform a `[3,3,C,K]` kernel into `U = G·g·Gᵀ`, laid out `[α², C, K]`.
pub fn transform_kernel<T: Scalar>(kernel: &Tensor<T>, m: usize) -> Result<Tensor<f64>, KernelError> {
    transform_kernel_in(&kernel.cast::<f64>(), m)
}

fn transform_kernel_in<T: Scalar>(kernel: &Tensor<T>, m: usize) -> Result<Tensor<T>, KernelError> {
    let &[3, 3, c, k] = kernel.shape() else {
        return Err(KernelError::UnsupportedConfig(format!(
            "winograd needs a 3x3 kernel, got {:?}",
            kernel.shape()
        )));
    };
    let mats = Mats::<T>::new(m)?;
    let (alpha, r) = (mats.alpha, 3);
    let kd = kernel.data();
    let mut u = vec![T::zero(); alpha * alpha * c * k];
    let mut tmp = vec![T::zero(); alpha * r];
    for ci in 0..c {
        for co in 0..k {
            let gk = |y: usize, x: usize| kd[((y * 3 + x) * c + ci) * k + co];
            // tmp = G · g   (α × 3)
            for i in 0..alpha {
                for x in 0..r {
                    let mut s = T::zero();
                    for y in 0..r {
                        s += mats.g[i * r + y] * gk(y, x);
                    }
                    tmp[i * r + x] = s;
                }
            }
            for i in 0..alpha {
                for j in 0..alpha {
                    let mut s = T::zero();
                    for x in 0..r {
                        s += tmp[i * r + x] * mats.g[j * r + x];
                    }
                    u[((i * alpha + j) * c + ci) * k + co] = s;
                }
            }
        }
    }
    Ok(Tensor::new(vec![alpha * alpha, c, k], u)?)
}

/// Input transform: gather padded `α×α` tiles and compute `Bᵀ·d·B`.
pub fn wg_encode<T: Scalar>(input: &Tensor<T>, m: usize, task_ops: usize) -> Result<Tensor<T>, KernelError> {
    Ok(encode(&input.cast::<f64>(), m, task_ops)?.cast())
}

fn encode<T: Scalar>(input: &Tensor<T>, m: usize, task_ops: usize) -> Result<Tensor<T>, KernelError> {
    let &[n, h, w, c] = input.shape() else {
        return Err(KernelError::ShapeMismatch(format!(
            "winograd encoder needs NHWC, got {:?}",
            input.shape()
        )));
    };
    let mats = Mats::<T>::new(m)?;
    let alpha = mats.alpha;
    let a2 = alpha * alpha;
    let (th, tw) = (h.div_ceil(m), w.div_ceil(m));
    let tiles = n * th * tw;
    let x = input.data();
    let per_tile = a2 * c;
    let mut tile_major = vec![T::zero(); tiles * per_tile];
    let chunk = rows_per_task(per_tile * alpha * 2, task_ops);

    tile_major
        .par_chunks_mut(per_tile * chunk)
        .enumerate()
        .for_each(|(ci, dst)| {
            let mut d = vec![T::zero(); a2];
            let mut tmp = vec![T::zero(); a2];
            for (o, out) in dst.chunks_mut(per_tile).enumerate() {
                let t = ci * chunk + o;
                let (b, rem) = (t / (th * tw), t % (th * tw));
                let (ty, tx) = (rem / tw, rem % tw);
                for ch in 0..c {
                    for i in 0..alpha {
                        let iy = (ty * m + i) as isize - 1;
                        for j in 0..alpha {
                            let ix = (tx * m + j) as isize - 1;
                            d[i * alpha + j] = if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                T::zero()
                            } else {
                                x[((b * h + iy as usize) * w + ix as usize) * c + ch]
                            };
                        }
                    }
                    // tmp = Bᵀ·d, then out = tmp·B
                    for i in 0..alpha {
                        for j in 0..alpha {
                            let mut s = T::zero();
                            for l in 0..alpha {
                                s += mats.bt[i * alpha + l] * d[l * alpha + j];
                            }
                            tmp[i * alpha + j] = s;
                        }
                    }
                    for i in 0..alpha {
                        for j in 0..alpha {
                            let mut s = T::zero();
                            for l in 0..alpha {
                                s += tmp[i * alpha + l] * mats.bt[j * alpha + l];
                            }
                            out[(i * alpha + j) * c + ch] = s;
                        }
                    }
                }
            }
        });

    let mut v = vec![T::zero(); tiles * per_tile];
    for t in 0..tiles {
        for xi in 0..a2 {
            let src = &tile_major[t * per_tile + xi * c..][..c];
            v[(xi * tiles + t) * c..][..c].copy_from_slice(src);
        }
    }
    Ok(Tensor::new(vec![a2, tiles, c], v)?)
}

/// Batched products `M[ξ] = V[ξ]·U[ξ]` of encoded tiles and transformed kernel.
pub fn wg_multiply<T: Scalar>(v: &Tensor<T>, u: &Tensor<f64>, task_ops: usize) -> Result<Tensor<T>, KernelError> {
    Ok(multiply(&v.cast::<f64>(), u, task_ops)?.cast())
}

fn multiply<T: Scalar>(v: &Tensor<T>, u: &Tensor<T>, task_ops: usize) -> Result<Tensor<T>, KernelError> {
    let (&[a2, tiles, c], &[ua2, uc, k]) = (v.shape(), u.shape()) else {
        return Err(KernelError::ShapeMismatch(format!(
            "winograd product got {:?} and {:?}",
            v.shape(),
            u.shape()
        )));
    };
    if a2 != ua2 || c != uc {
        return Err(KernelError::ShapeMismatch(format!(
            "winograd product got {:?} and {:?}",
            v.shape(),
            u.shape()
        )));
    }
    let (vd, ud) = (v.data(), u.data());
    let mut out = vec![T::zero(); a2 * tiles * k];
    let rows = rows_per_task(c * k, task_ops);
    if k > 0 {
        out.par_chunks_mut(rows * k).enumerate().for_each(|(chunk, dst)| {
            for (o, acc) in dst.chunks_mut(k).enumerate() {
                let row = chunk * rows + o;
                let xi = row / tiles;
                let vr = &vd[row * c..][..c];
                for (ci, &x) in vr.iter().enumerate() {
                    let ur = &ud[(xi * c + ci) * k..][..k];
                    for (a, &w) in acc.iter_mut().zip(ur) {
                        *a += x * w;
                    }
                }
            }
        });
    }
    Ok(Tensor::new(vec![a2, tiles, k], out)?)
}

/// Output transform `Aᵀ·M·A`, cropped to `out_h×out_w`, plus bias.
pub fn wg_decode<T: Scalar>(
    mt: &Tensor<T>,
    m: usize,
    out_h: usize,
    out_w: usize,
    bias: Option<&Tensor<T>>,
    task_ops: usize,
) -> Result<Tensor<T>, KernelError> {
    let bias = bias.map(|b| b.cast::<f64>());
    Ok(decode(&mt.cast::<f64>(), m, out_h, out_w, bias.as_ref(), task_ops)?.cast())
}

fn decode<T: Scalar>(
    mt: &Tensor<T>,
    m: usize,
    out_h: usize,
    out_w: usize,
    bias: Option<&Tensor<T>>,
    task_ops: usize,
) -> Result<Tensor<T>, KernelError> {
    let mats = Mats::<T>::new(m)?;
    let alpha = mats.alpha;
    let a2 = alpha * alpha;
    let per_img = tile_count(out_h, out_w, m);
    let &[sa2, tiles, k] = mt.shape() else {
        return Err(KernelError::ShapeMismatch(format!("winograd decoder got {:?}", mt.shape())));
    };
    if sa2 != a2 || per_img == 0 || tiles % per_img != 0 {
        return Err(KernelError::ShapeMismatch(format!("winograd decoder got {:?}", mt.shape())));
    }
    check_bias(bias, k)?;
    let n = tiles / per_img;
    let tw = out_w.div_ceil(m);
    let md = mt.data();
    let per_tile = m * m * k;
    let mut tile_major = vec![T::zero(); tiles * per_tile];
    let chunk = rows_per_task(a2 * k * 2, task_ops);

    tile_major
        .par_chunks_mut(per_tile * chunk)
        .enumerate()
        .for_each(|(ci, dst)| {
            let mut tmp = vec![T::zero(); m * alpha];
            for (o, out) in dst.chunks_mut(per_tile).enumerate() {
                let t = ci * chunk + o;
                for co in 0..k {
                    let at = |xi: usize| md[(xi * tiles + t) * k + co];
                    // tmp = Aᵀ·M   (m × α)
                    for i in 0..m {
                        for j in 0..alpha {
                            let mut s = T::zero();
                            for l in 0..alpha {
                                s += mats.a[l * m + i] * at(l * alpha + j);
                            }
                            tmp[i * alpha + j] = s;
                        }
                    }
                    for i in 0..m {
                        for j in 0..m {
                            let mut s = T::zero();
                            for l in 0..alpha {
                                s += tmp[i * alpha + l] * mats.a[l * m + j];
                            }
                            out[(i * m + j) * k + co] = s;
                        }
                    }
                }
            }
        });

    let mut y = vec![T::zero(); n * out_h * out_w * k];
    for t in 0..tiles {
        let (b, rem) = (t / per_img, t % per_img);
        let (ty, tx) = (rem / tw, rem % tw);
        for i in 0..m {
            let oy = ty * m + i;
            if oy >= out_h {
                break;
            }
            for j in 0..m {
                let ox = tx * m + j;
                if ox >= out_w {
                    break;
                }
                let dst = &mut y[((b * out_h + oy) * out_w + ox) * k..][..k];
                dst.copy_from_slice(&tile_major[t * per_tile + (i * m + j) * k..][..k]);
                if let Some(bias) = bias {
                    for (d, &bv) in dst.iter_mut().zip(bias.data()) {
                        *d += bv;
                    }
                }
            }
        }
    }
    Ok(Tensor::new(vec![n, out_h, out_w, k], y)?)
}

/// Whether a conv layer can run through the Winograd routine.
pub fn supports(p: &Conv2Params, kernel_shape: &[usize]) -> bool {
    matches!(kernel_shape, [3, 3, _, _])
        && p.strides == (1, 1)
        && p.dilations == (1, 1)
        && p.padding == Padding::Same
}

/// Encoder, product and decoder composed into one convolution.
pub fn conv2_winograd<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    p: &Conv2Params,
    m: usize,
    task_ops: usize,
) -> Result<Tensor<T>, KernelError> {
    if !supports(p, kernel.shape()) {
        return Err(KernelError::UnsupportedConfig(format!(
            "winograd needs a 3x3 same-padded unit-stride conv, got kernel {:?} with {p:?}",
            kernel.shape()
        )));
    }
    let &[_, h, w, c] = input.shape() else {
        return Err(KernelError::ShapeMismatch(format!("expected NHWC, got {:?}", input.shape())));
    };
    if kernel.shape()[2] != c {
        return Err(KernelError::ShapeMismatch(format!(
            "kernel has {} input channels, input has {c}",
            kernel.shape()[2]
        )));
    }
    let u = transform_kernel(kernel, m)?;
    let v = encode(&input.cast::<f64>(), m, task_ops)?;
    let prod = multiply(&v, &u, task_ops)?;
    let bias = bias.map(|b| b.cast::<f64>());
    Ok(decode(&prod, m, h, w, bias.as_ref(), task_ops)?.cast())
}
