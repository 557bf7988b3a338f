use rand::Rng;

use super::{clip_boxes, resize_bilinear, SoftSample};
use crate::error::{Error, Result};
use crate::geometry::{BBox, SoftBox};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Fill value for pixels uncovered by a translation.
const FILL: f64 = 0.5;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Crop {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

/// Applied in field order: crop, stretch, rotate, flips, translate.
#[derive(Clone, Copy, PartialEq, Debug, Default)]
pub struct GeoParams {
    pub crop: Option<Crop>,
    /// Resample to (width, height).
    pub stretch: Option<(usize, usize)>,
    /// Quarter turns clockwise.
    pub rotate90: u8,
    pub hflip: bool,
    pub vflip: bool,
    /// Shift in pixels; uncovered pixels are mid-grey.
    pub translate: (i64, i64),
}

impl GeoParams {
    pub fn is_identity(&self) -> bool {
        *self == GeoParams::default()
    }

    /// Random crop keeping at least `min_keep` of each side, stretched back to
    /// the original size, a horizontal flip with probability 1/2, an optional
    /// quarter turn and a shift of up to `max_shift` of each side.
    pub fn random(w: usize, h: usize, min_keep: f64, rotate_prob: f64, max_shift: f64, rng: &mut impl Rng) -> Self {
        let cw = ((w as f64 * rng.random_range(min_keep..=1.0)).round() as usize).clamp(1, w);
        let ch = ((h as f64 * rng.random_range(min_keep..=1.0)).round() as usize).clamp(1, h);
        let crop = Crop { x: rng.random_range(0..=w - cw), y: rng.random_range(0..=h - ch), w: cw, h: ch };
        let rotate90 = if rng.random_bool(rotate_prob) { 2 } else { 0 };
        let sx = (w as f64 * max_shift) as i64;
        let sy = (h as f64 * max_shift) as i64;
        GeoParams {
            crop: Some(crop),
            stretch: Some((w, h)),
            rotate90,
            hflip: rng.random_bool(0.5),
            vflip: false,
            translate: (rng.random_range(-sx..=sx), rng.random_range(-sy..=sy)),
        }
    }
}

fn map_image<T: Scalar>(
    img: &Tensor<T>,
    h: usize,
    w: usize,
    src: impl Fn(usize, usize) -> Option<(usize, usize)>,
) -> Tensor<T> {
    let s = img.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, h, w), |n, c, y, x| match src(y, x) {
        Some((sy, sx)) => img.at(n, c, sy, sx),
        None => T::lit(FILL),
    })
}

fn map_boxes(boxes: &[SoftBox], f: impl Fn(&BBox<f64>) -> BBox<f64>) -> Vec<SoftBox> {
    boxes.iter().map(|b| SoftBox { bbox: f(&b.bbox), ..b.clone() }).collect()
}

pub fn geometric<T: Scalar>(sample: &SoftSample<T>, p: &GeoParams) -> Result<SoftSample<T>> {
    let mut img = sample.image.clone();
    let mut boxes = sample.boxes.clone();
    let (mut w, mut h) = (sample.width(), sample.height());

    if let Some(c) = p.crop {
        if c.w == 0 || c.h == 0 || c.x + c.w > w || c.y + c.h > h {
            return Err(Error::Invalid(format!(
                "crop ({}, {}, {}x{}) is empty or leaves the {w}x{h} frame",
                c.x, c.y, c.w, c.h
            )));
        }
        img = map_image(&img, c.h, c.w, |y, x| Some((y + c.y, x + c.x)));
        let shifted = map_boxes(&boxes, |b| b.translate(-(c.x as f64), -(c.y as f64)));
        boxes = clip_boxes(shifted, BBox::new(0.0, 0.0, c.w as f64, c.h as f64));
        (w, h) = (c.w, c.h);
    }
    if let Some((tw, th)) = p.stretch {
        if tw == 0 || th == 0 {
            return Err(Error::Invalid("stretch to an empty size".into()));
        }
        img = resize_bilinear(&img, th, tw);
        let (sx, sy) = (tw as f64 / w as f64, th as f64 / h as f64);
        boxes = map_boxes(&boxes, |b| b.scale(sx, sy));
        (w, h) = (tw, th);
    }
    for _ in 0..p.rotate90 % 4 {
        let hh = h as f64;
        let old_h = h;
        img = map_image(&img, w, h, |y, x| Some((old_h - 1 - x, y)));
        boxes = map_boxes(&boxes, |b| BBox::new(hh - b.bottom(), b.x, b.h, b.w));
        (w, h) = (h, w);
    }
    if p.hflip {
        img = map_image(&img, h, w, |y, x| Some((y, w - 1 - x)));
        let ww = w as f64;
        boxes = map_boxes(&boxes, |b| BBox::new(ww - b.x - b.w, b.y, b.w, b.h));
    }
    if p.vflip {
        img = map_image(&img, h, w, |y, x| Some((h - 1 - y, x)));
        let hh = h as f64;
        boxes = map_boxes(&boxes, |b| BBox::new(b.x, hh - b.y - b.h, b.w, b.h));
    }
    if p.translate != (0, 0) {
        let (dx, dy) = p.translate;
        img = map_image(&img, h, w, |y, x| {
            let (sy, sx) = (y as i64 - dy, x as i64 - dx);
            (sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w).then_some((sy as usize, sx as usize))
        });
        let shifted = map_boxes(&boxes, |b| b.translate(dx as f64, dy as f64));
        boxes = clip_boxes(shifted, BBox::new(0.0, 0.0, w as f64, h as f64));
    }
    Ok(SoftSample { image: img, boxes, lambda: sample.lambda })
}
