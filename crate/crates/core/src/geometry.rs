//! Axis-aligned boxes in `(x, y, w, h)` form with a top-left origin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct BBox<T: Scalar = f64> {
    pub x: T,
    pub y: T,
    pub w: T,
    pub h: T,
}

impl<T: Scalar> BBox<T> {
    pub fn new(x: T, y: T, w: T, h: T) -> Self {
        BBox { x, y, w, h }
    }

    /// Validating constructor: `w > 0`, `h > 0`, all finite.
    pub fn try_new(x: T, y: T, w: T, h: T) -> Result<Self> {
        let b = BBox { x, y, w, h };
        if !b.is_valid() {
            return Err(Error::Invalid(format!("box ({x}, {y}, {w}, {h}) needs positive finite extent")));
        }
        Ok(b)
    }

    pub fn from_corners(x0: T, y0: T, x1: T, y1: T) -> Self {
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn from_center(cx: T, cy: T, w: T, h: T) -> Self {
        let half = T::lit(0.5);
        BBox::new(cx - half * w, cy - half * h, w, h)
    }

    pub fn is_valid(&self) -> bool {
        self.w > T::zero()
            && self.h > T::zero()
            && self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
    }

    #[inline]
    pub fn right(&self) -> T {
        self.x + self.w
    }

    #[inline]
    pub fn bottom(&self) -> T {
        self.y + self.h
    }

    #[inline]
    pub fn center(&self) -> (T, T) {
        let half = T::lit(0.5);
        (self.x + half * self.w, self.y + half * self.h)
    }

    #[inline]
    pub fn area(&self) -> T {
        self.w * self.h
    }

    pub fn translate(&self, dx: T, dy: T) -> Self {
        BBox::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    pub fn scale(&self, sx: T, sy: T) -> Self {
        BBox::new(self.x * sx, self.y * sy, self.w * sx, self.h * sy)
    }

    /// Overlapping region, if it has positive area.
    pub fn intersection(&self, other: &BBox<T>) -> Option<BBox<T>> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        (x1 > x0 && y1 > y0).then(|| BBox::from_corners(x0, y0, x1, y1))
    }

    /// Clips to `[0, width] x [0, height]`.
    pub fn clip(&self, width: T, height: T) -> Option<BBox<T>> {
        self.intersection(&BBox::new(T::zero(), T::zero(), width, height))
    }

    pub fn within(&self, width: T, height: T, tol: T) -> bool {
        self.x >= -tol && self.y >= -tol && self.right() <= width + tol && self.bottom() <= height + tol
    }

    pub fn cast<U: Scalar>(&self) -> BBox<U> {
        BBox::new(U::lit(self.x.as_f64()), U::lit(self.y.as_f64()), U::lit(self.w.as_f64()), U::lit(self.h.as_f64()))
    }
}

/// Overlap area of two boxes; each side factor is clamped at zero so disjoint
/// boxes give 0.
pub fn overlap<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let ix = (a.right().min(b.right()) - a.x.max(b.x)).max(T::zero());
    let iy = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(T::zero());
    ix * iy
}

/// Intersection over union, in `[0, 1]`.
pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let g = overlap(a, b);
    let union = a.area() + b.area() - g;
    if union <= T::zero() {
        return T::zero();
    }
    (g / union).min(T::one())
}

/// A box with a class distribution and a label weight.
///
/// `classes` always sums to 1; mixing augmentations scale `weight` instead, so
/// the effective soft label is `weight * classes`.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct SoftBox {
    pub bbox: BBox<f64>,
    pub classes: Vec<f64>,
    pub weight: f64,
}

impl SoftBox {
    pub fn hard(bbox: BBox<f64>, class_id: usize, num_classes: usize) -> Self {
        let mut classes = vec![0.0; num_classes];
        classes[class_id] = 1.0;
        SoftBox { bbox, classes, weight: 1.0 }
    }

    /// Most likely class, lowest id on ties.
    pub fn class_id(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.classes.iter().enumerate() {
            if p > self.classes[best] {
                best = i;
            }
        }
        best
    }

    /// Label mass (`weight * sum(classes)`).
    pub fn mass(&self) -> f64 {
        self.weight * self.classes.iter().sum::<f64>()
    }
}
