//! Reductions split over eight fixed partial sums. The compiler turns these
//! into SIMD code, and the combination order never changes, so results are
//! reproducible run to run.

use crate::scalar::Scalar;

const LANES: usize = 8;

#[inline]
fn fold<T: Scalar>(lanes: [T; LANES], tail: T) -> T {
    ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7])) + tail
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [T::zero(); LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    fold(lanes, tail)
}

#[inline]
pub(crate) fn lane_sum<T: Scalar>(a: &[T]) -> T {
    let mut lanes = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let tail = ca.remainder().iter().fold(T::zero(), |s, &x| s + x);
    for x in ca {
        for l in 0..LANES {
            lanes[l] += x[l];
        }
    }
    fold(lanes, tail)
}

/// sum of (x - mu)^2
#[inline]
pub(crate) fn squared_deviation<T: Scalar>(a: &[T], mu: T) -> T {
    let mut lanes = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let tail = ca.remainder().iter().fold(T::zero(), |s, &x| s + (x - mu) * (x - mu));
    for x in ca {
        for l in 0..LANES {
            let d = x[l] - mu;
            lanes[l] += d * d;
        }
    }
    fold(lanes, tail)
}

/// y += alpha * x
#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (d, &v) in y.iter_mut().zip(x) {
        *d += alpha * v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn match_naive_sums() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64 * 0.11).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
        assert!((lane_sum(&a) - a.iter().sum::<f64>()).abs() < 1e-12);
        let sq: f64 = a.iter().map(|x| (x - 0.2) * (x - 0.2)).sum();
        assert!((squared_deviation(&a, 0.2) - sq).abs() < 1e-12);
        let mut y = b.clone();
        axpy(2.0, &a, &mut y);
        assert!((y[5] - (b[5] + 2.0 * a[5])).abs() < 1e-15);
    }
}
