//! Seeded augmentation: geometric transforms, image mixing (mixup, cutmix)
//! and four-image mosaics, carrying boxes and label weights along.

mod geometric;
mod mix;
mod mosaic;
mod pipeline;

pub use geometric::{geometric, Crop, GeoParams};
pub use mix::{cutmix, cutmix_with_rect, mixup, Rect};
pub use mosaic::{mosaic, mosaic_at};
pub use pipeline::{augment_from_dataset, augment_sample, sample_seed, AugmentConfig};

use crate::error::{Error, Result};
use crate::geometry::{BBox, SoftBox};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Smallest area, in px², a box may keep after clipping.
pub const MIN_BOX_AREA: f64 = 4.0;
/// Smallest fraction of its pre-clip area a box may keep.
pub const MIN_BOX_FRACTION: f64 = 0.25;

/// One image (1, C, H, W) in [0, 1] with its boxes.
#[derive(Clone, PartialEq, Debug)]
pub struct SoftSample<T: Scalar = f32> {
    pub image: Tensor<T>,
    pub boxes: Vec<SoftBox>,
    /// Share of the image that came from the first mixing operand; 1 when
    /// nothing was mixed.
    pub lambda: f64,
}

impl<T: Scalar> SoftSample<T> {
    pub fn new(image: Tensor<T>, boxes: Vec<SoftBox>) -> Result<Self> {
        if image.shape().n != 1 {
            return Err(Error::shape("sample", format!("expected one image, got {}", image.shape())));
        }
        let s = SoftSample { image, boxes, lambda: 1.0 };
        let (w, h) = (s.width() as f64, s.height() as f64);
        if let Some(b) = s.boxes.iter().find(|b| !b.bbox.is_valid() || !b.bbox.within(w, h, 1e-9)) {
            return Err(Error::Invalid(format!("box {:?} outside the {w}x{h} frame", b.bbox)));
        }
        Ok(s)
    }

    pub fn width(&self) -> usize {
        self.image.shape().w
    }

    pub fn height(&self) -> usize {
        self.image.shape().h
    }

    /// Resamples to `h`×`w`, scaling the boxes.
    pub fn resized(&self, h: usize, w: usize) -> Self {
        if (h, w) == (self.height(), self.width()) {
            return self.clone();
        }
        let sx = w as f64 / self.width() as f64;
        let sy = h as f64 / self.height() as f64;
        SoftSample {
            image: resize_bilinear(&self.image, h, w),
            boxes: self.boxes.iter().map(|b| SoftBox { bbox: b.bbox.scale(sx, sy), ..b.clone() }).collect(),
            lambda: self.lambda,
        }
    }
}

/// Bilinear resampling with pixel-centre alignment.
pub fn resize_bilinear<T: Scalar>(img: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let s = img.shape();
    if (s.h, s.w) == (h, w) {
        return img.clone();
    }
    let (sy, sx) = (s.h as f64 / h as f64, s.w as f64 / w as f64);
    let taps = |dst: usize, scale: f64, len: usize| {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, src - i0 as f64)
    };
    let xs: Vec<_> = (0..w).map(|x| taps(x, sx, s.w)).collect();
    let ys: Vec<_> = (0..h).map(|y| taps(y, sy, s.h)).collect();
    Tensor::from_fn(Shape::new(s.n, s.c, h, w), |n, c, y, x| {
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[x];
        let p = |yy, xx| img.at(n, c, yy, xx).as_f64();
        let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
        let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
        T::lit(top * (1.0 - fy) + bot * fy)
    })
}

/// Applies the survival rule to a box whose visible part is `visible` (with
/// `visible_area` pixels) out of an original of area `original_area`.
pub(crate) fn survives(visible: Option<BBox<f64>>, visible_area: f64, original_area: f64) -> Option<BBox<f64>> {
    let v = visible?;
    (v.is_valid() && visible_area >= MIN_BOX_AREA && visible_area >= MIN_BOX_FRACTION * original_area).then_some(v)
}

/// Clips each box to `frame` (x, y, w, h) and drops those that fail the
/// survival rule.
pub(crate) fn clip_boxes(boxes: impl IntoIterator<Item = SoftBox>, frame: BBox<f64>) -> Vec<SoftBox> {
    boxes
        .into_iter()
        .filter_map(|b| {
            let inter = b.bbox.intersection(&frame);
            let area = inter.map_or(0.0, |i| i.area());
            survives(inter, area, b.bbox.area()).map(|bbox| SoftBox { bbox, ..b })
        })
        .collect()
}
