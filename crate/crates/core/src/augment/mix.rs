use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use super::{clip_boxes, survives, SoftSample};
use crate::error::{Error, Result};
use crate::geometry::{BBox, SoftBox};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn same_dims<T: Scalar>(a: &SoftSample<T>, b: &SoftSample<T>) -> Result<()> {
    if a.image.shape() != b.image.shape() {
        return Err(Error::shape("mix", format!("{} vs {}", a.image.shape(), b.image.shape())));
    }
    Ok(())
}

fn weighted(boxes: &[SoftBox], w: f64) -> impl Iterator<Item = SoftBox> + '_ {
    boxes.iter().map(move |b| SoftBox { weight: b.weight * w, ..b.clone() })
}

/// `λ·a + (1−λ)·b`; a's boxes keep weight `λ`, b's `1−λ`.
pub fn mixup<T: Scalar>(a: &SoftSample<T>, b: &SoftSample<T>, lambda: f64) -> Result<SoftSample<T>> {
    same_dims(a, b)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Invalid(format!("mixup weight {lambda} outside [0, 1]")));
    }
    let (la, lb) = (T::lit(lambda), T::lit(1.0 - lambda));
    let data = a.image.data().iter().zip(b.image.data()).map(|(&x, &y)| la * x + lb * y).collect();
    Ok(SoftSample {
        image: Tensor::from_vec(a.image.shape(), data)?,
        boxes: weighted(&a.boxes, lambda).chain(weighted(&b.boxes, 1.0 - lambda)).collect(),
        lambda,
    })
}

/// Integer pixel rectangle.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    fn bbox(&self) -> BBox<f64> {
        BBox::new(self.x as f64, self.y as f64, self.w as f64, self.h as f64)
    }

    fn contains(&self, y: usize, x: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }
}

/// Bounding box of `b` minus `r`, or `None` when `r` covers it.
fn trim(b: &BBox<f64>, r: &BBox<f64>) -> Option<BBox<f64>> {
    let (mut x0, mut y0, mut x1, mut y1) = (b.x, b.y, b.right(), b.bottom());
    let spans_y = r.y <= y0 && r.bottom() >= y1;
    let spans_x = r.x <= x0 && r.right() >= x1;
    if spans_x && spans_y {
        return None;
    }
    if spans_y {
        if r.x <= x0 && r.right() > x0 {
            x0 = r.right();
        } else if r.x < x1 && r.right() >= x1 {
            x1 = r.x;
        }
    }
    if spans_x {
        if r.y <= y0 && r.bottom() > y0 {
            y0 = r.bottom();
        } else if r.y < y1 && r.bottom() >= y1 {
            y1 = r.y;
        }
    }
    (x1 > x0 && y1 > y0).then(|| BBox::from_corners(x0, y0, x1, y1))
}

/// Pastes `rect` of `b` over `a`. The kept share is
/// `λ = 1 − area(rect)/area(frame)`; a's boxes get weight `λ`, b's `1−λ`.
/// `None` pastes nothing.
pub fn cutmix_with_rect<T: Scalar>(a: &SoftSample<T>, b: &SoftSample<T>, rect: Option<Rect>) -> Result<SoftSample<T>> {
    same_dims(a, b)?;
    let (w, h) = (a.width(), a.height());
    let Some(r) = rect.filter(|r| r.w > 0 && r.h > 0) else {
        return Ok(SoftSample { image: a.image.clone(), boxes: a.boxes.clone(), lambda: 1.0 });
    };
    if r.x + r.w > w || r.y + r.h > h {
        return Err(Error::Invalid(format!("cutmix rectangle {r:?} leaves the {w}x{h} frame")));
    }
    let lambda = 1.0 - (r.w * r.h) as f64 / (w * h) as f64;
    let s = a.image.shape();
    let image =
        Tensor::from_fn(s, |n, c, y, x| if r.contains(y, x) { b.image.at(n, c, y, x) } else { a.image.at(n, c, y, x) });
    let rb = r.bbox();
    let from_a = weighted(&a.boxes, lambda).filter_map(|sb| {
        let covered = sb.bbox.intersection(&rb).map_or(0.0, |i| i.area());
        let area = sb.bbox.area();
        survives(trim(&sb.bbox, &rb), area - covered, area).map(|bbox| SoftBox { bbox, ..sb })
    });
    let mut boxes: Vec<SoftBox> = from_a.collect();
    boxes.extend(clip_boxes(weighted(&b.boxes, 1.0 - lambda), rb));
    Ok(SoftSample { image, boxes, lambda })
}

/// Draws `λ₀ ~ Beta(α, α)` and pastes a rectangle with sides
/// `√(1−λ₀)·W` × `√(1−λ₀)·H` at a uniform position; `λ` is then recomputed
/// from the realized area.
pub fn cutmix<T: Scalar>(a: &SoftSample<T>, b: &SoftSample<T>, alpha: f64, seed: u64) -> Result<SoftSample<T>> {
    same_dims(a, b)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lambda0 =
        Beta::new(alpha, alpha).map_err(|e| Error::Invalid(format!("beta parameter {alpha}: {e}")))?.sample(&mut rng);
    let (w, h) = (a.width(), a.height());
    let side = (1.0 - lambda0).sqrt();
    let rw = ((w as f64 * side).round() as usize).min(w);
    let rh = ((h as f64 * side).round() as usize).min(h);
    let rect = Rect { x: rng.random_range(0..=w - rw), y: rng.random_range(0..=h - rh), w: rw, h: rh };
    cutmix_with_rect(a, b, Some(rect))
}
