use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::{cutmix, geometric, mixup, mosaic, GeoParams, SoftSample};
use crate::data::DatasetIndex;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub geometric: bool,
    pub mixup: bool,
    pub cutmix: bool,
    pub mosaic: bool,
    /// Chance that each enabled mixing operation fires for a sample.
    pub prob: f64,
    /// Beta(α, α) parameter for mixing weights.
    pub beta_alpha: f64,
    pub crop_min_keep: f64,
    pub rotate_prob: f64,
    pub max_shift: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            geometric: true,
            mixup: false,
            cutmix: false,
            mosaic: false,
            prob: 0.5,
            beta_alpha: 1.0,
            crop_min_keep: 0.75,
            rotate_prob: 0.0,
            max_shift: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig { geometric: false, ..Default::default() }
    }
}

/// Per-sample seed, so the result never depends on processing order.
pub fn sample_seed(base: u64, index: usize) -> u64 {
    base ^ index as u64
}

/// [`augment_sample`] with the whole of `index` as the pool.
pub fn augment_from_dataset<T: Scalar>(
    index: &DatasetIndex,
    sample: usize,
    size: (usize, usize),
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<SoftSample<T>> {
    if sample >= index.len() {
        return Err(Error::Invalid(format!("sample {sample} outside a dataset of {}", index.len())));
    }
    let pick = |i: usize| -> Result<SoftSample<T>> {
        let (image, ann) = index.load::<T>(i)?;
        SoftSample::new(image, index.classes.soft_boxes(&ann)?)
    };
    augment_sample(&pick, index.len(), sample, size, cfg, seed)
}

/// Builds the augmented version of sample `index` out of a pool of `pool`
/// samples fetched through `pick`. The output is `size` = (h, w).
pub fn augment_sample<T: Scalar>(
    pick: &dyn Fn(usize) -> Result<SoftSample<T>>,
    pool: usize,
    index: usize,
    size: (usize, usize),
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<SoftSample<T>> {
    if pool == 0 {
        return Err(Error::Invalid("empty sample pool".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, index));
    let (h, w) = size;
    let base = |i: usize, rng: &mut ChaCha8Rng| -> Result<SoftSample<T>> {
        let s = pick(i)?.resized(h, w);
        if cfg.geometric {
            let p = GeoParams::random(w, h, cfg.crop_min_keep, cfg.rotate_prob, cfg.max_shift, rng);
            geometric(&s, &p)
        } else {
            Ok(s)
        }
    };

    let mut out = if cfg.mosaic && rng.random_bool(cfg.prob) {
        let mut four = vec![base(index, &mut rng)?];
        for _ in 0..3 {
            let j = rng.random_range(0..pool);
            four.push(base(j, &mut rng)?);
        }
        mosaic(&four, size, rng.random())?
    } else {
        base(index, &mut rng)?
    };

    let mixers: Vec<u8> = [(cfg.mixup, 0u8), (cfg.cutmix, 1u8)].iter().filter(|(on, _)| *on).map(|(_, k)| *k).collect();
    if !mixers.is_empty() && rng.random_bool(cfg.prob) {
        let which = mixers[rng.random_range(0..mixers.len())];
        let partner = base(rng.random_range(0..pool), &mut rng)?;
        out = if which == 0 {
            let lambda = Beta::new(cfg.beta_alpha, cfg.beta_alpha)
                .map_err(|e| Error::Invalid(format!("beta parameter {}: {e}", cfg.beta_alpha)))?
                .sample(&mut rng);
            mixup(&out, &partner, lambda)?
        } else {
            cutmix(&out, &partner, cfg.beta_alpha, rng.random())?
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BBox, SoftBox};
    use crate::tensor::{Shape, Tensor};

    fn pool(i: usize) -> Result<SoftSample<f32>> {
        let img = Tensor::from_fn(Shape::new(1, 3, 24, 36), |_, c, y, x| ((i * 31 + c * 7 + y + x) % 97) as f32 / 96.0);
        SoftSample::new(img, vec![SoftBox::hard(BBox::new(4.0, 4.0, 12.0, 10.0), i % 2, 2)])
    }

    #[test]
    fn seeded_and_in_range() {
        let cfg = AugmentConfig { mixup: true, cutmix: true, mosaic: true, prob: 1.0, ..Default::default() };
        for i in 0..6 {
            let a = augment_sample(&pool, 5, i, (32, 32), &cfg, 7).unwrap();
            let b = augment_sample(&pool, 5, i, (32, 32), &cfg, 7).unwrap();
            assert_eq!(a, b);
            assert_eq!((a.height(), a.width()), (32, 32));
            assert!(a.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            for bx in &a.boxes {
                assert!((bx.classes.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                assert!(bx.bbox.within(32.0, 32.0, 1e-9));
            }
        }
    }
}
