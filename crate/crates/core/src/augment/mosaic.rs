use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{clip_boxes, resize_bilinear, SoftSample};
use crate::error::{Error, Result};
use crate::geometry::{BBox, SoftBox};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Tiles four samples around `center` (x, y) into an `h`×`w` image: top-left,
/// top-right, bottom-left, bottom-right. Each sample is scaled to cover its
/// region and cropped on the side facing away from the centre. Label weights
/// are kept.
pub fn mosaic_at<T: Scalar>(
    samples: &[SoftSample<T>],
    size: (usize, usize),
    center: (usize, usize),
) -> Result<SoftSample<T>> {
    if samples.len() != 4 {
        return Err(Error::Invalid(format!("mosaic needs 4 samples, got {}", samples.len())));
    }
    let (h, w) = size;
    let (cx, cy) = center;
    if cx == 0 || cy == 0 || cx >= w || cy >= h {
        return Err(Error::Invalid(format!("mosaic centre {center:?} leaves an empty region in {w}x{h}")));
    }
    let channels = samples[0].image.shape().c;
    if samples.iter().any(|s| s.image.shape().c != channels) {
        return Err(Error::shape("mosaic", "samples differ in channel count"));
    }
    let regions = [(0, 0, cx, cy), (cx, 0, w - cx, cy), (0, cy, cx, h - cy), (cx, cy, w - cx, h - cy)];
    let mut image = Tensor::<T>::zeros(Shape::new(1, channels, h, w));
    let mut boxes = Vec::new();
    for (q, (s, &(rx, ry, rw, rh))) in samples.iter().zip(&regions).enumerate() {
        let scale = (rw as f64 / s.width() as f64).max(rh as f64 / s.height() as f64);
        let sw = ((s.width() as f64 * scale).ceil() as usize).max(rw);
        let sh = ((s.height() as f64 * scale).ceil() as usize).max(rh);
        let scaled = resize_bilinear(&s.image, sh, sw);
        let ox = if q % 2 == 0 { sw - rw } else { 0 };
        let oy = if q < 2 { sh - rh } else { 0 };
        for c in 0..channels {
            for y in 0..rh {
                for x in 0..rw {
                    image.set(0, c, ry + y, rx + x, scaled.at(0, c, oy + y, ox + x));
                }
            }
        }
        let (fx, fy) = (sw as f64 / s.width() as f64, sh as f64 / s.height() as f64);
        let dx = rx as f64 - ox as f64;
        let dy = ry as f64 - oy as f64;
        let moved = s.boxes.iter().map(|b| SoftBox { bbox: b.bbox.scale(fx, fy).translate(dx, dy), ..b.clone() });
        boxes.extend(clip_boxes(moved, BBox::new(rx as f64, ry as f64, rw as f64, rh as f64)));
    }
    Ok(SoftSample { image, boxes, lambda: 1.0 })
}

/// [`mosaic_at`] with the centre drawn uniformly from the middle half of each
/// axis.
pub fn mosaic<T: Scalar>(samples: &[SoftSample<T>], size: (usize, usize), seed: u64) -> Result<SoftSample<T>> {
    let (h, w) = size;
    if h < 4 || w < 4 {
        return Err(Error::Invalid(format!("mosaic output {w}x{h} is too small")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cx = rng.random_range(w / 4..=(3 * w / 4).min(w - 1)).max(1);
    let cy = rng.random_range(h / 4..=(3 * h / 4).min(h - 1)).max(1);
    mosaic_at(samples, size, (cx, cy))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tile(v: f32, boxes: Vec<SoftBox>) -> SoftSample<f32> {
        SoftSample::new(Tensor::full(Shape::new(1, 3, 20, 30), v), boxes).unwrap()
    }

    #[test]
    fn middle_centre_partitions() {
        let samples: Vec<_> = (0..4)
            .map(|i| tile(0.1 + 0.2 * i as f32, vec![SoftBox::hard(BBox::new(10.0, 6.0, 10.0, 8.0), i, 4)]))
            .collect();
        let m = mosaic_at(&samples, (40, 60), (30, 20)).unwrap();
        assert_eq!((m.width(), m.height()), (60, 40));
        for y in 0..40 {
            for x in 0..60 {
                let q = usize::from(x >= 30) + 2 * usize::from(y >= 20);
                assert_eq!(m.image.at(0, 1, y, x), 0.1 + 0.2 * q as f32);
            }
        }
        assert_eq!(m.boxes.len(), 4);
        let mut ids: Vec<usize> = m.boxes.iter().map(SoftBox::class_id).collect();
        ids.sort();
        assert_eq!(ids, vec![0, 1, 2, 3]);
    }

    #[test]
    fn output_size_fixed_and_seeded() {
        let samples: Vec<_> = (0..4).map(|i| tile(i as f32 / 4.0, vec![])).collect();
        let a = mosaic(&samples, (64, 48), 9).unwrap();
        assert_eq!((a.height(), a.width()), (64, 48));
        assert_eq!(a, mosaic(&samples, (64, 48), 9).unwrap());
        assert!(mosaic(&samples[..3], (64, 48), 9).is_err());
    }
}
