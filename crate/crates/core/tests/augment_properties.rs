//! Augmentation invariants over many random pipelines and mixing endpoints.

mod common;

use btp_core::augment::{cutmix_with_rect, geometric, mixup, mosaic_at, GeoParams, Rect};
use btp_core::tensor::Shape;
use common::*;
use proptest::prelude::*;

const SIDE: usize = AUG_SIDE;

#[test]
fn thousand_pipelines_keep_invariants() {
    check_pipelines(1000, 2024).unwrap();
}

#[test]
fn different_seeds_differ() {
    let pool = sample_pool();
    let a = run_pipeline(&pool, 15, 0, 1);
    let b = run_pipeline(&pool, 15, 0, 2);
    assert_ne!(a.image, b.image);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn mixup_endpoints_and_swap(sa in any::<u64>(), sb in any::<u64>(), lambda in 0.5..=1.0f64) {
        let (a, b) = (random_sample(sa, SIDE, SIDE), random_sample(sb, SIDE, SIDE));
        let one = mixup(&a, &b, 1.0).unwrap();
        prop_assert_eq!(&one.image, &a.image);
        prop_assert!(one.boxes[a.boxes.len()..].iter().all(|x| x.weight == 0.0));
        // 1 - λ is exact on [0.5, 1], so the swapped call sees the same weights.
        let ab = mixup(&a, &b, lambda).unwrap();
        let ba = mixup(&b, &a, 1.0 - lambda).unwrap();
        prop_assert_eq!(ab.image, ba.image);
        let mass: f64 = ab.boxes.iter().map(|x| x.weight).sum();
        let want = lambda * a.boxes.len() as f64 + (1.0 - lambda) * b.boxes.len() as f64;
        prop_assert!((mass - want).abs() < 1e-12);
    }

    #[test]
    fn cutmix_rect_semantics(sa in any::<u64>(), sb in any::<u64>(),
                             x in 0usize..SIDE, y in 0usize..SIDE, w in 1usize..=SIDE, h in 1usize..=SIDE) {
        let (a, b) = (random_sample(sa, SIDE, SIDE), random_sample(sb, SIDE, SIDE));
        let none = cutmix_with_rect(&a, &b, None).unwrap();
        prop_assert_eq!(&none.image, &a.image);
        prop_assert_eq!(none.lambda, 1.0);
        let full = cutmix_with_rect(&a, &b, Some(Rect { x: 0, y: 0, w: SIDE, h: SIDE })).unwrap();
        prop_assert_eq!(&full.image, &b.image);
        prop_assert_eq!(full.lambda, 0.0);

        let r = Rect { x, y, w: w.min(SIDE - x), h: h.min(SIDE - y) };
        let out = cutmix_with_rect(&a, &b, Some(r)).unwrap();
        for c in 0..3 {
            for py in 0..SIDE {
                for px in 0..SIDE {
                    let inside = px >= r.x && px < r.x + r.w && py >= r.y && py < r.y + r.h;
                    let src = if inside { &b.image } else { &a.image };
                    prop_assert_eq!(out.image.at(0, c, py, px).to_bits(), src.at(0, c, py, px).to_bits());
                }
            }
        }
        prop_assert_eq!(out.lambda, 1.0 - (r.w * r.h) as f64 / (SIDE * SIDE) as f64);
    }

    #[test]
    fn double_flip_is_identity(seed in any::<u64>(), vertical in any::<bool>()) {
        let s = random_sample(seed, SIDE + 6, SIDE);
        let p = GeoParams { hflip: !vertical, vflip: vertical, ..GeoParams::default() };
        let back = geometric(&geometric(&s, &p).unwrap(), &p).unwrap();
        prop_assert_eq!(&back.image, &s.image);
        for (u, v) in back.boxes.iter().zip(&s.boxes) {
            for (p, q) in [(u.bbox.x, v.bbox.x), (u.bbox.y, v.bbox.y), (u.bbox.w, v.bbox.w), (u.bbox.h, v.bbox.h)] {
                prop_assert!((p - q).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn mosaic_output_dims(s in any::<u64>(), cx in 1usize..SIDE, cy in 1usize..SIDE) {
        let four: Vec<_> = (0..4).map(|i| random_sample(s ^ i, SIDE + i as usize, SIDE)).collect();
        let out = mosaic_at(&four, (SIDE, SIDE), (cx, cy)).unwrap();
        prop_assert_eq!(out.image.shape(), Shape::new(1, 3, SIDE, SIDE));
        for b in &out.boxes {
            prop_assert!(b.bbox.within(SIDE as f64, SIDE as f64, 1e-9));
        }
    }
}
