use super::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// 2x2 max pooling with stride 2. Odd spatial sizes are rejected.
pub fn max_pool2<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::shape("max_pool2", format!("spatial dims {}x{} must be even", s.h, s.w)));
    }
    let (oh, ow) = (s.h / 2, s.w / 2);
    let mut out = Vec::with_capacity(s.n * s.c * oh * ow);
    for n in 0..s.n {
        for c in 0..s.c {
            let p = input.plane(n, c);
            for oy in 0..oh {
                let r0 = &p[2 * oy * s.w..(2 * oy + 1) * s.w];
                let r1 = &p[(2 * oy + 1) * s.w..(2 * oy + 2) * s.w];
                for ox in 0..ow {
                    let m = r0[2 * ox].max(r0[2 * ox + 1]).max(r1[2 * ox].max(r1[2 * ox + 1]));
                    out.push(m);
                }
            }
        }
    }
    Tensor::from_vec(Shape::new(s.n, s.c, oh, ow), out)
}

/// Routes each output gradient to the first maximal element of its window
/// (row-major scan order).
pub fn max_pool2_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    let expect = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) || grad_out.shape() != expect {
        return Err(Error::shape("max_pool2_backward", format!("grad {} for input {s}", grad_out.shape())));
    }
    let mut grad = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..expect.h {
                for ox in 0..expect.w {
                    let mut best = (2 * oy, 2 * ox);
                    let mut best_v = input.at(n, c, best.0, best.1);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let v = input.at(n, c, 2 * oy + dy, 2 * ox + dx);
                        if v > best_v {
                            best_v = v;
                            best = (2 * oy + dy, 2 * ox + dx);
                        }
                    }
                    let i = grad.index(n, c, best.0, best.1);
                    grad.data_mut()[i] += grad_out.at(n, c, oy, ox);
                }
            }
        }
    }
    Ok(grad)
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let os = Shape::new(s.n, s.c, s.h * 2, s.w * 2);
    Tensor::from_fn(os, |n, c, y, x| input.at(n, c, y / 2, x / 2))
}

/// Sums each 2x2 block of the upstream gradient.
pub fn upsample2_backward<T: Scalar>(grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let s = grad_out.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::shape("upsample2_backward", format!("gradient {s} is not an upsampled shape")));
    }
    let os = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    Ok(Tensor::from_fn(os, |n, c, y, x| {
        grad_out.at(n, c, 2 * y, 2 * x)
            + grad_out.at(n, c, 2 * y, 2 * x + 1)
            + grad_out.at(n, c, 2 * y + 1, 2 * x)
            + grad_out.at(n, c, 2 * y + 1, 2 * x + 1)
    }))
}

/// Channel concatenation, first tensor's channels first.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::shape("concat_channels", "nothing to concatenate"))?.shape();
    for p in parts {
        let s = p.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::shape(
                "concat_channels",
                format!("{s} does not match {first} outside the channel axis"),
            ));
        }
    }
    let channels: usize = parts.iter().map(|p| p.shape().c).sum();
    let mut data = Vec::with_capacity(first.n * channels * first.plane());
    for n in 0..first.n {
        for p in parts {
            data.extend_from_slice(p.item(n));
        }
    }
    Tensor::from_vec(Shape::new(first.n, channels, first.h, first.w), data)
}

/// Splits a concatenated gradient back into per-input gradients.
pub fn concat_channels_backward<T: Scalar>(grad_out: &Tensor<T>, channels: &[usize]) -> Result<Vec<Tensor<T>>> {
    let s = grad_out.shape();
    if channels.iter().sum::<usize>() != s.c {
        return Err(Error::shape(
            "concat_channels_backward",
            format!("channel split {channels:?} does not sum to {}", s.c),
        ));
    }
    let mut outs = Vec::with_capacity(channels.len());
    let mut offset = 0;
    for &ch in channels {
        let os = Shape::new(s.n, ch, s.h, s.w);
        let mut data = Vec::with_capacity(os.len());
        for n in 0..s.n {
            let item = grad_out.item(n);
            data.extend_from_slice(&item[offset * s.plane()..(offset + ch) * s.plane()]);
        }
        outs.push(Tensor::from_vec(os, data)?);
        offset += ch;
    }
    Ok(outs)
}
