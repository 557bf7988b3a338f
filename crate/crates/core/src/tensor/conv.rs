use rayon::prelude::*;

use super::lanes::{axpy, dot, lane_sum};
use super::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct ConvGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Option<Vec<T>>,
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(op: &'static str, input: Shape, k: usize, stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 || k == 0 {
            return Err(Error::shape(op, "kernel and stride must be positive"));
        }
        if input.h + 2 * pad < k || input.w + 2 * pad < k {
            return Err(Error::shape(op, format!("kernel {k} with pad {pad} does not fit input {input}")));
        }
        Ok(Geometry {
            c: input.c,
            h: input.h,
            w: input.w,
            k,
            stride,
            pad,
            oh: (input.h + 2 * pad - k) / stride + 1,
            ow: (input.w + 2 * pad - k) / stride + 1,
        })
    }

    fn is_identity_1x1(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output columns `ox` for which `ox*stride + kx - pad` lands inside `[0, len)`.
    #[inline]
    fn valid_range(len: usize, out: usize, stride: usize, offset: isize) -> (usize, usize) {
        // first ox with ox*stride + offset >= 0
        let lo = if offset >= 0 { 0 } else { ((-offset) as usize).div_ceil(stride) };
        // last ox with ox*stride + offset <= len - 1
        let top = len as isize - 1 - offset;
        let hi = if top < 0 { 0 } else { (top as usize / stride + 1).min(out) };
        (lo.min(hi), hi)
    }
}

/// Unfolds one batch item into a `(C*K*K) x (OH*OW)` matrix.
fn im2col<T: Scalar>(item: &[T], g: &Geometry, col: &mut [T]) {
    let plane = g.oh * g.ow;
    let mut row = 0;
    for c in 0..g.c {
        let src = &item[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let dst = &mut col[row * plane..(row + 1) * plane];
                let off_x = kx as isize - g.pad as isize;
                let (lo, hi) = Geometry::valid_range(g.w, g.ow, g.stride, off_x);
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy as usize >= g.h {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out_row[..lo].fill(T::zero());
                    out_row[hi..].fill(T::zero());
                    for ox in lo..hi {
                        out_row[ox] = src_row[(ox * g.stride) + kx - g.pad];
                    }
                }
                row += 1;
            }
        }
    }
}

/// Folds a column-gradient matrix back onto one batch item (accumulating).
fn col2im<T: Scalar>(col: &[T], g: &Geometry, item: &mut [T]) {
    let plane = g.oh * g.ow;
    let mut row = 0;
    for c in 0..g.c {
        let dst = &mut item[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let src = &col[row * plane..(row + 1) * plane];
                let off_x = kx as isize - g.pad as isize;
                let (lo, hi) = Geometry::valid_range(g.w, g.ow, g.stride, off_x);
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let src_row = &src[oy * g.ow..(oy + 1) * g.ow];
                    for ox in lo..hi {
                        dst_row[(ox * g.stride) + kx - g.pad] += src_row[ox];
                    }
                }
                row += 1;
            }
        }
    }
}

/// c[m x n] += a[m x k] * b[k x n]
fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// c[m x n] += a[m x k] * b[n x k]^T
fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// c[m x n] += a[k x m]^T * b[k x n]
fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

fn check_dense(op: &'static str, input: &Tensor<impl Scalar>, weights: Shape, bias_len: Option<usize>) -> Result<()> {
    let s = input.shape();
    if weights.c != s.c {
        return Err(Error::shape(
            op,
            format!("input channels {} but weights expect {} (weights {weights})", s.c, weights.c),
        ));
    }
    if weights.h != weights.w {
        return Err(Error::shape(op, format!("non-square kernel {weights}")));
    }
    if let Some(len) = bias_len {
        if len != weights.n {
            return Err(Error::shape(op, format!("bias length {len} but {} output channels", weights.n)));
        }
    }
    Ok(())
}

/// Dense 2-D convolution with zero padding. `weights` is `(outC, inC, K, K)`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&[T]>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let ws = weights.shape();
    check_dense("conv2d", input, ws, bias.map(<[T]>::len))?;
    let g = Geometry::new("conv2d", input.shape(), ws.h, stride, pad)?;
    let s = input.shape();
    let out_c = ws.n;
    let plane = g.oh * g.ow;
    let rows = g.c * g.k * g.k;
    let items: Vec<Vec<T>> = (0..s.n)
        .into_par_iter()
        .map(|n| {
            let mut out = vec![T::zero(); out_c * plane];
            if let Some(b) = bias {
                for (m, &bv) in b.iter().enumerate() {
                    out[m * plane..(m + 1) * plane].fill(bv);
                }
            }
            if g.is_identity_1x1() {
                gemm(out_c, rows, plane, weights.data(), input.item(n), &mut out);
            } else {
                let mut col = vec![T::zero(); rows * plane];
                im2col(input.item(n), &g, &mut col);
                gemm(out_c, rows, plane, weights.data(), &col, &mut out);
            }
            out
        })
        .collect();
    Tensor::from_vec(Shape::new(s.n, out_c, g.oh, g.ow), items.concat())
}

/// Gradients of [`conv2d`] given the forward input and upstream gradient.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
    with_bias: bool,
) -> Result<ConvGrads<T>> {
    let (grad_in, grad_w) = conv2d_grads(input, weights, grad_out, stride, pad, true)?;
    Ok(ConvGrads {
        input: grad_in.expect("input gradient requested"),
        weights: grad_w,
        bias: with_bias.then(|| channel_sums(grad_out)),
    })
}

/// Kernel gradient, plus the input gradient when `want_input` is set. The
/// first layer of a network never needs the latter and it is the costly half.
pub(crate) fn conv2d_grads<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
    want_input: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>)> {
    let ws = weights.shape();
    check_dense("conv2d_backward", input, ws, None)?;
    let g = Geometry::new("conv2d_backward", input.shape(), ws.h, stride, pad)?;
    let s = input.shape();
    let out_c = ws.n;
    let expect = Shape::new(s.n, out_c, g.oh, g.ow);
    if grad_out.shape() != expect {
        return Err(Error::shape("conv2d_backward", format!("grad {} but output is {expect}", grad_out.shape())));
    }
    let plane = g.oh * g.ow;
    let rows = g.c * g.k * g.k;
    let per_item: Vec<(Vec<T>, Vec<T>)> = (0..s.n)
        .into_par_iter()
        .map(|n| {
            let go = grad_out.item(n);
            let mut gw = vec![T::zero(); out_c * rows];
            let mut gin = Vec::new();
            if g.is_identity_1x1() {
                gemm_nt(out_c, plane, rows, go, input.item(n), &mut gw);
                if want_input {
                    gin = vec![T::zero(); s.item()];
                    gemm_tn(rows, out_c, plane, weights.data(), go, &mut gin);
                }
            } else {
                let mut col = vec![T::zero(); rows * plane];
                im2col(input.item(n), &g, &mut col);
                gemm_nt(out_c, plane, rows, go, &col, &mut gw);
                if want_input {
                    col.fill(T::zero());
                    gemm_tn(rows, out_c, plane, weights.data(), go, &mut col);
                    gin = vec![T::zero(); s.item()];
                    col2im(&col, &g, &mut gin);
                }
            }
            (gin, gw)
        })
        .collect();
    let mut grad_w = vec![T::zero(); ws.len()];
    let mut grad_in = Vec::with_capacity(if want_input { s.len() } else { 0 });
    for (gin, gw) in per_item {
        grad_in.extend_from_slice(&gin);
        for (a, b) in grad_w.iter_mut().zip(gw) {
            *a += b;
        }
    }
    let grad_in = if want_input { Some(Tensor::from_vec(s, grad_in)?) } else { None };
    Ok((grad_in, Tensor::from_vec(ws, grad_w)?))
}

pub(crate) fn channel_sums<T: Scalar>(t: &Tensor<T>) -> Vec<T> {
    let s = t.shape();
    let mut sums = vec![T::zero(); s.c];
    for n in 0..s.n {
        for (c, sum) in sums.iter_mut().enumerate() {
            *sum += lane_sum(t.plane(n, c));
        }
    }
    sums
}

/// 1x1 convolution: a per-pixel linear map over channels.
pub fn pointwise_conv2d<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: Option<&[T]>) -> Result<Tensor<T>> {
    if weights.shape().h != 1 || weights.shape().w != 1 {
        return Err(Error::shape("pointwise_conv2d", format!("weights {} are not 1x1", weights.shape())));
    }
    conv2d(input, weights, bias, 1, 0)
}

pub fn pointwise_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    with_bias: bool,
) -> Result<ConvGrads<T>> {
    conv2d_backward(input, weights, grad_out, 1, 0, with_bias)
}

fn check_depthwise(input: Shape, weights: Shape) -> Result<()> {
    if weights.n != input.c || weights.c != 1 || weights.h != weights.w {
        return Err(Error::shape(
            "depthwise_conv2d",
            format!("weights {weights} do not match {} input channels (expected ({}, 1, K, K))", input.c, input.c),
        ));
    }
    Ok(())
}

/// Per-channel convolution. `weights` is `(C, 1, K, K)`; channel `c` of the
/// output depends only on channel `c` of the input.
pub fn depthwise_conv2d<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let s = input.shape();
    check_depthwise(s, weights.shape())?;
    let g = Geometry::new("depthwise_conv2d", s, weights.shape().h, stride, pad)?;
    let plane = g.oh * g.ow;
    let kk = g.k * g.k;
    let items: Vec<Vec<T>> = (0..s.n)
        .into_par_iter()
        .map(|n| {
            let mut out = vec![T::zero(); s.c * plane];
            for c in 0..s.c {
                let src = input.plane(n, c);
                let wk = &weights.data()[c * kk..(c + 1) * kk];
                let dst = &mut out[c * plane..(c + 1) * plane];
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let wv = wk[ky * g.k + kx];
                        let off_x = kx as isize - g.pad as isize;
                        let (lo, hi) = Geometry::valid_range(g.w, g.ow, g.stride, off_x);
                        for oy in 0..g.oh {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy as usize >= g.h {
                                continue;
                            }
                            let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                            let dst_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                            if g.stride == 1 {
                                let base = kx as isize - g.pad as isize;
                                let s0 = (lo as isize + base) as usize;
                                let s1 = (hi as isize + base) as usize;
                                for (d, &v) in dst_row[lo..hi].iter_mut().zip(&src_row[s0..s1]) {
                                    *d += wv * v;
                                }
                            } else {
                                for ox in lo..hi {
                                    dst_row[ox] += wv * src_row[ox * g.stride + kx - g.pad];
                                }
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();
    Tensor::from_vec(Shape::new(s.n, s.c, g.oh, g.ow), items.concat())
}

pub fn depthwise_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads<T>> {
    let s = input.shape();
    check_depthwise(s, weights.shape())?;
    let g = Geometry::new("depthwise_conv2d_backward", s, weights.shape().h, stride, pad)?;
    let expect = Shape::new(s.n, s.c, g.oh, g.ow);
    if grad_out.shape() != expect {
        return Err(Error::shape(
            "depthwise_conv2d_backward",
            format!("grad {} but output is {expect}", grad_out.shape()),
        ));
    }
    let kk = g.k * g.k;
    let per_item: Vec<(Vec<T>, Vec<T>)> = (0..s.n)
        .into_par_iter()
        .map(|n| {
            let mut gin = vec![T::zero(); s.item()];
            let mut gw = vec![T::zero(); s.c * kk];
            for c in 0..s.c {
                let src = input.plane(n, c);
                let go = grad_out.plane(n, c);
                let wk = &weights.data()[c * kk..(c + 1) * kk];
                let gi = &mut gin[c * g.h * g.w..(c + 1) * g.h * g.w];
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let wv = wk[ky * g.k + kx];
                        let off_x = kx as isize - g.pad as isize;
                        let (lo, hi) = Geometry::valid_range(g.w, g.ow, g.stride, off_x);
                        let mut acc = T::zero();
                        for oy in 0..g.oh {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy as usize >= g.h {
                                continue;
                            }
                            let row = iy as usize * g.w;
                            if g.stride == 1 {
                                let s0 = (row as isize + lo as isize + off_x) as usize;
                                let s1 = s0 + (hi - lo);
                                let go_row = &go[oy * g.ow + lo..oy * g.ow + hi];
                                acc += dot(go_row, &src[s0..s1]);
                                axpy(wv, go_row, &mut gi[s0..s1]);
                                continue;
                            }
                            for ox in lo..hi {
                                let ix = row + ox * g.stride + kx - g.pad;
                                let gv = go[oy * g.ow + ox];
                                acc += gv * src[ix];
                                gi[ix] += gv * wv;
                            }
                        }
                        gw[c * kk + ky * g.k + kx] += acc;
                    }
                }
            }
            (gin, gw)
        })
        .collect();
    let mut grad_w = vec![T::zero(); weights.shape().len()];
    let mut grad_in = Vec::with_capacity(s.len());
    for (gin, gw) in per_item {
        grad_in.extend_from_slice(&gin);
        for (a, b) in grad_w.iter_mut().zip(gw) {
            *a += b;
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_vec(s, grad_in)?,
        weights: Tensor::from_vec(weights.shape(), grad_w)?,
        bias: None,
    })
}
