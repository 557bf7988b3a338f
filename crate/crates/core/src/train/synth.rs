use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Annotation, ClassRegistry, DatasetIndex, Object};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::tensor::{Shape, Tensor};

/// Class 0 is drawn as filled ellipses, class 1 as filled rectangles.
pub const SYNTH_CLASSES: [&str; 2] = ["ellipse", "rectangle"];

/// Minimum empty band kept around every shape.
pub const SHAPE_GAP: usize = 4;

const BACKGROUND: (f32, f32) = (0.35, 0.65);
const TEXTURE: f32 = 0.03;
const PLACEMENT_TRIES: usize = 60;

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_images: usize,
    pub width: usize,
    pub height: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Shape side lengths in pixels, inclusive range.
    pub min_size: usize,
    pub max_size: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_images: 240,
            width: 256,
            height: 256,
            min_objects: 1,
            max_objects: 4,
            min_size: 24,
            max_size: 96,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// The default spec at `size`×`size`, object sizes scaled to match.
    pub fn square(num_images: usize, size: usize, seed: u64) -> Self {
        let d = SynthSpec::default();
        let scale = |v: usize| (v * size / d.width).max(4);
        SynthSpec {
            num_images,
            width: size,
            height: size,
            min_size: scale(d.min_size),
            max_size: scale(d.max_size),
            seed,
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_objects > self.max_objects || self.min_size < 2 || self.min_size > self.max_size {
            return Err(Error::Invalid("synthetic spec: empty object-count or size range".into()));
        }
        if self.max_size + 2 * SHAPE_GAP > self.width.min(self.height) {
            return Err(Error::Invalid(format!(
                "synthetic spec: shapes up to {} px do not fit a {}x{} image",
                self.max_size, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// A drawn shape: its class, base colour and tight pixel box.
#[derive(Clone, PartialEq, Debug)]
pub struct SynthObject {
    pub class_id: usize,
    pub color: [f32; 3],
    pub bbox: BBox<f64>,
}

#[derive(Clone, PartialEq, Debug)]
pub struct SynthImage {
    pub image: Tensor<f32>,
    pub objects: Vec<SynthObject>,
}

/// A colour with at least one channel far from the background band, so the
/// shapes always stand out from the noise.
fn shape_color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    let mut c = [0.0f32; 3];
    for v in &mut c {
        *v = rng.random_range(0.05..0.95);
    }
    let k = rng.random_range(0..3);
    c[k] = if rng.random_bool(0.5) { rng.random_range(0.05..0.15) } else { rng.random_range(0.85..0.95) };
    c
}

fn overlaps(a: (usize, usize, usize, usize), b: (usize, usize, usize, usize)) -> bool {
    let g = SHAPE_GAP;
    a.0 < b.0 + b.2 + g && b.0 < a.0 + a.2 + g && a.1 < b.1 + b.3 + g && b.1 < a.1 + a.3 + g
}

/// Renders image `index` of the dataset described by `spec`.
pub fn render_synthetic(spec: &SynthSpec, index: usize) -> Result<SynthImage> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let (w, h) = (spec.width, spec.height);
    let mut img = Tensor::from_fn(Shape::new(1, 3, h, w), |_, _, _, _| 0.0f32);
    for v in img.data_mut() {
        *v = rng.random_range(BACKGROUND.0..BACKGROUND.1);
    }

    let count = rng.random_range(spec.min_objects..=spec.max_objects);
    let mut placed: Vec<(usize, usize, usize, usize)> = Vec::new();
    let mut objects = Vec::new();
    for _ in 0..count {
        let class_id = rng.random_range(0..SYNTH_CLASSES.len());
        let color = shape_color(&mut rng);
        let mut spot = None;
        for _ in 0..PLACEMENT_TRIES {
            let bw = rng.random_range(spec.min_size..=spec.max_size);
            let bh = rng.random_range(spec.min_size..=spec.max_size);
            let x = rng.random_range(0..=w - bw);
            let y = rng.random_range(0..=h - bh);
            let r = (x, y, bw, bh);
            if placed.iter().all(|&p| !overlaps(p, r)) {
                spot = Some(r);
                break;
            }
        }
        let Some((x, y, bw, bh)) = spot else {
            continue;
        };
        placed.push((x, y, bw, bh));
        let (cx, cy) = (x as f64 + bw as f64 / 2.0, y as f64 + bh as f64 / 2.0);
        let (rx, ry) = (bw as f64 / 2.0, bh as f64 / 2.0);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for py in y..y + bh {
            for px in x..x + bw {
                let inside = class_id == 1 || {
                    let dx = (px as f64 + 0.5 - cx) / rx;
                    let dy = (py as f64 + 0.5 - cy) / ry;
                    dx * dx + dy * dy <= 1.0
                };
                if !inside {
                    continue;
                }
                for (c, &base) in color.iter().enumerate() {
                    let v = base + rng.random_range(-TEXTURE..TEXTURE);
                    img.set(0, c, py, px, v.clamp(0.0, 1.0));
                }
                x0 = x0.min(px);
                y0 = y0.min(py);
                x1 = x1.max(px + 1);
                y1 = y1.max(py + 1);
            }
        }
        if x0 == usize::MAX {
            continue;
        }
        objects.push(SynthObject {
            class_id,
            color,
            bbox: BBox::from_corners(x0 as f64, y0 as f64, x1 as f64, y1 as f64),
        });
    }
    Ok(SynthImage { image: img, objects })
}

/// Writes `spec.num_images` image/annotation pairs under `root` and returns
/// the (unsplit) index.
pub fn gen_synthetic(spec: &SynthSpec, root: impl AsRef<Path>) -> Result<DatasetIndex> {
    spec.validate()?;
    let classes = ClassRegistry::new(SYNTH_CLASSES.iter().map(|s| s.to_string()).collect())?;
    let mut index = DatasetIndex::create(root, classes)?;
    let digits = spec.num_images.max(1).to_string().len().max(4);
    for i in 0..spec.num_images {
        let s = render_synthetic(spec, i)?;
        let stem = format!("synth_{i:0digits$}");
        let mut ann = Annotation::new(format!("{stem}.ppm"), spec.width, spec.height);
        ann.objects = s
            .objects
            .iter()
            .map(|o| Object { name: SYNTH_CLASSES[o.class_id].to_string(), bbox: o.bbox, weight: 1.0 })
            .collect();
        index.add_sample(&stem, &s.image, &ann)?;
    }
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_scales_object_sizes() {
        assert_eq!(SynthSpec::square(240, 256, 0), SynthSpec::default());
        let s = SynthSpec::square(3, 64, 1);
        assert_eq!((s.min_size, s.max_size, s.width), (6, 24, 64));
        s.validate().unwrap();
    }

    fn small() -> SynthSpec {
        SynthSpec {
            num_images: 6,
            width: 96,
            height: 80,
            min_objects: 1,
            max_objects: 3,
            min_size: 10,
            max_size: 30,
            seed: 3,
        }
    }

    #[test]
    fn deterministic_and_separated() {
        let spec = small();
        for i in 0..spec.num_images {
            let a = render_synthetic(&spec, i).unwrap();
            let b = render_synthetic(&spec, i).unwrap();
            assert_eq!(a.image, b.image);
            assert_eq!(a.objects, b.objects);
            assert!(!a.objects.is_empty());
            for (j, o) in a.objects.iter().enumerate() {
                assert!(o.bbox.within(96.0, 80.0, 0.0));
                for p in &a.objects[j + 1..] {
                    assert!(o.bbox.intersection(&p.bbox).is_none());
                }
            }
        }
        let other = SynthSpec { seed: 4, ..spec.clone() };
        assert_ne!(render_synthetic(&spec, 0).unwrap().image, render_synthetic(&other, 0).unwrap().image);
    }

    #[test]
    fn rejects_oversized_shapes() {
        let spec = SynthSpec { max_size: 90, ..small() };
        assert!(render_synthetic(&spec, 0).is_err());
    }

    #[test]
    fn writes_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let idx = gen_synthetic(&small(), dir.path()).unwrap();
        assert_eq!(idx.len(), 6);
        let scanned = DatasetIndex::scan(dir.path()).unwrap();
        assert_eq!(scanned.len(), 6);
        let (img, ann) = scanned.load::<f32>(2).unwrap();
        assert_eq!((img.shape().w, img.shape().h), (96, 80));
        assert_eq!(ann.objects.len(), render_synthetic(&small(), 2).unwrap().objects.len());
    }
}
