use super::lanes::{dot, lane_sum, squared_deviation};
use super::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const BN_EPS: f64 = 1e-5;
/// Weight kept by the running statistics on each training update.
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BnMode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with the running statistics.
    Infer,
}

/// Per-channel affine and running statistics.
#[derive(Clone, PartialEq, Debug)]
pub struct BnParams<T: Scalar> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Scalar> BnParams<T> {
    /// gamma 1, beta 0, mean 0, var 1.
    pub fn identity(channels: usize) -> Self {
        BnParams {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, channels: usize) -> Result<()> {
        let lens = [self.gamma.len(), self.beta.len(), self.running_mean.len(), self.running_var.len()];
        if lens.iter().any(|&l| l != channels) {
            return Err(Error::shape("batch_norm", format!("parameter lengths {lens:?} for {channels} channels")));
        }
        Ok(())
    }

    /// Folds the batch statistics of a training-mode forward into the running
    /// statistics (`running = m * running + (1 - m) * batch`).
    pub fn update_running(&mut self, cache: &BnCache<T>) {
        if cache.mode != BnMode::Train {
            return;
        }
        let m = T::lit(BN_MOMENTUM);
        let one_m = T::one() - m;
        let count = cache.count;
        let unbias = if count > 1 { T::from_count(count) / T::from_count(count - 1) } else { T::one() };
        for c in 0..self.channels() {
            self.running_mean[c] = m * self.running_mean[c] + one_m * cache.mean[c];
            self.running_var[c] = m * self.running_var[c] + one_m * cache.var[c] * unbias;
        }
    }
}

/// Saved context of a batch-norm forward.
#[derive(Clone, Debug)]
pub struct BnCache<T: Scalar> {
    pub mode: BnMode,
    /// Normalized input (x - mean) / sqrt(var + eps).
    pub x_hat: Tensor<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Elements per channel in the batch.
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct BnGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub fn batch_norm<T: Scalar>(input: &Tensor<T>, params: &BnParams<T>, mode: BnMode) -> Result<(Tensor<T>, BnCache<T>)> {
    let s = input.shape();
    params.check(s.c)?;
    let count = s.n * s.plane();
    let (mean, var) = match mode {
        BnMode::Infer => (params.running_mean.clone(), params.running_var.clone()),
        BnMode::Train => batch_stats(input),
    };
    let eps = T::lit(BN_EPS);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut x_hat = input.clone();
    let mut out = input.clone();
    for n in 0..s.n {
        for c in 0..s.c {
            let start = (n * s.c + c) * s.plane();
            let range = start..start + s.plane();
            let (mu, is, g, b) = (mean[c], inv_std[c], params.gamma[c], params.beta[c]);
            for (xh, y) in x_hat.data_mut()[range.clone()].iter_mut().zip(&mut out.data_mut()[range]) {
                *xh = (*xh - mu) * is;
                *y = g * *xh + b;
            }
        }
    }
    Ok((out, BnCache { mode, x_hat, mean, var, count }))
}

fn batch_stats<T: Scalar>(input: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let s = input.shape();
    let count = T::from_count(s.n * s.plane());
    let mut mean = vec![T::zero(); s.c];
    let mut var = vec![T::zero(); s.c];
    for c in 0..s.c {
        let mut acc = T::zero();
        for n in 0..s.n {
            acc += lane_sum(input.plane(n, c));
        }
        let mu = acc / count;
        let mut sq = T::zero();
        for n in 0..s.n {
            sq += squared_deviation(input.plane(n, c), mu);
        }
        mean[c] = mu;
        var[c] = sq / count;
    }
    (mean, var)
}

pub fn batch_norm_backward<T: Scalar>(cache: &BnCache<T>, gamma: &[T], grad_out: &Tensor<T>) -> Result<BnGrads<T>> {
    let s: Shape = cache.x_hat.shape();
    if grad_out.shape() != s || gamma.len() != s.c {
        return Err(Error::shape("batch_norm_backward", format!("grad {} for cached {s}", grad_out.shape())));
    }
    let eps = T::lit(BN_EPS);
    let count = T::from_count(cache.count);
    let mut grad_gamma = vec![T::zero(); s.c];
    let mut grad_beta = vec![T::zero(); s.c];
    for c in 0..s.c {
        for n in 0..s.n {
            let start = (n * s.c + c) * s.plane();
            let xh = &cache.x_hat.data()[start..start + s.plane()];
            let g = &grad_out.data()[start..start + s.plane()];
            grad_gamma[c] += dot(g, xh);
            grad_beta[c] += lane_sum(g);
        }
    }
    let mut grad_in = Tensor::zeros(s);
    for c in 0..s.c {
        let inv_std = T::one() / (cache.var[c] + eps).sqrt();
        let scale = gamma[c] * inv_std;
        for n in 0..s.n {
            let start = (n * s.c + c) * s.plane();
            let xh = &cache.x_hat.data()[start..start + s.plane()];
            let g = &grad_out.data()[start..start + s.plane()];
            let gi = &mut grad_in.data_mut()[start..start + s.plane()];
            match cache.mode {
                BnMode::Infer => {
                    for (o, &gv) in gi.iter_mut().zip(g) {
                        *o = gv * scale;
                    }
                }
                BnMode::Train => {
                    // dx = gamma/std * (g - mean(g) - x_hat * mean(g * x_hat))
                    let mean_g = grad_beta[c] / count;
                    let mean_gx = grad_gamma[c] / count;
                    for ((o, &gv), &x) in gi.iter_mut().zip(g).zip(xh) {
                        *o = scale * (gv - mean_g - x * mean_gx);
                    }
                }
            }
        }
    }
    Ok(BnGrads { input: grad_in, gamma: grad_gamma, beta: grad_beta })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tensor<f64> {
        Tensor::from_fn(Shape::new(3, 2, 4, 5), |n, c, y, x| {
            ((n * 7 + c * 13 + y * 3 + x * 5) % 11) as f64 * (c as f64 + 0.5) - 2.0
        })
    }

    #[test]
    fn identity_params_in_infer_mode() {
        let x = sample();
        let (y, _) = batch_norm(&x, &BnParams::identity(2), BnMode::Infer).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() <= 1e-5 * a.abs().max(1e-12) + 1e-12);
        }
    }

    #[test]
    fn train_mode_normalizes_per_channel() {
        let x = sample();
        let mut p = BnParams::identity(2);
        p.gamma = vec![2.0, 0.5];
        p.beta = vec![1.0, -3.0];
        let (y, cache) = batch_norm(&x, &p, BnMode::Train).unwrap();
        let (mean, var) = batch_stats(&y);
        for c in 0..2 {
            assert!((mean[c] - p.beta[c]).abs() < 1e-4);
            assert!((var[c] - p.gamma[c] * p.gamma[c]).abs() < 1e-4);
        }
        let before = p.running_mean.clone();
        p.update_running(&cache);
        assert_ne!(p.running_mean, before);
        let expect = 0.99 * 0.0 + 0.01 * cache.mean[0];
        assert!((p.running_mean[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn centering() {
        let mut p = BnParams::identity(1);
        p.gamma = vec![2.0];
        p.beta = vec![3.0];
        p.running_mean = vec![4.0];
        let x = Tensor::full(Shape::new(1, 1, 1, 1), 4.0);
        let (y, _) = batch_norm(&x, &p, BnMode::Infer).unwrap();
        assert_eq!(y.data(), &[3.0]);
    }

    #[test]
    fn length_mismatch() {
        let p = BnParams::<f64>::identity(3);
        assert!(batch_norm(&sample(), &p, BnMode::Infer).is_err());
    }
}
