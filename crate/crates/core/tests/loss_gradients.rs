//! Finite-difference oracles for the box loss and the full head loss.

mod common;

use btp_core::geometry::{iou, BBox, SoftBox};
use btp_core::loss::{
    aspect_term_v, ciou_alpha, ciou_loss, ciou_loss_grad, ciou_loss_with_alpha, total_loss, LossConfig,
};
use common::*;
use rand::Rng;

fn random_pair_box(rng: &mut rand_chacha::ChaCha8Rng) -> BBox<f64> {
    BBox::new(
        rng.random_range(0.0..10.0),
        rng.random_range(0.0..10.0),
        rng.random_range(0.5..6.0),
        rng.random_range(0.5..6.0),
    )
}

/// Central difference with `alpha` frozen at the unperturbed value, since the
/// analytic gradient treats it as a constant.
fn fd_ciou(pred: &BBox<f64>, truth: &BBox<f64>, k: usize) -> f64 {
    let alpha = ciou_alpha(iou(pred, truth), aspect_term_v(pred, truth));
    let h = 1e-6;
    let bump = |d: f64| {
        let mut v = [pred.x, pred.y, pred.w, pred.h];
        v[k] += d;
        ciou_loss_with_alpha(&BBox::new(v[0], v[1], v[2], v[3]), truth, alpha)
    };
    (bump(h) - bump(-h)) / (2.0 * h)
}

#[test]
fn ciou_hand_value() {
    let l = ciou_loss(&BBox::new(0.0, 0.0, 2.0, 2.0), &BBox::new(1.0, 0.0, 2.0, 2.0));
    assert!((l - (1.0 - 1.0 / 3.0 + 1.0 / 13.0)).abs() < 1e-12);
    assert!((l - 0.74359).abs() < 1e-4);
}

#[test]
fn ciou_gradient_matches_finite_differences() {
    let mut rng = rng(11);
    for _ in 0..50 {
        let (p, t) = (random_pair_box(&mut rng), random_pair_box(&mut rng));
        let (_, g) = ciou_loss_grad(&p, &t);
        for (k, gk) in g.iter().enumerate() {
            let fd = fd_ciou(&p, &t, k);
            assert!(rel_err(fd, *gk) < 1e-6, "pair {p:?} {t:?} field {k}: fd {fd} analytic {gk}");
        }
    }
}

#[test]
fn head_loss_components_and_gradients_match_oracle() {
    for seed in 0..50 {
        let inst = random_loss_instance(seed);
        for cfg in isolating_configs(&inst) {
            let worst = loss_fd(&inst, &cfg).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
            assert!(worst < 1e-5, "seed {seed} {cfg:?}: relative error {worst:e}");
        }
    }
}

#[test]
fn loss_ignores_truth_order() {
    for seed in 0..20 {
        let inst = random_loss_instance(seed);
        let refs: Vec<_> = inst.heads.iter().collect();
        let cfg = LossConfig::default();
        let (a, ga) = total_loss(&refs, &inst.truths, &inst.anchors, LOSS_INPUT, &cfg, true).unwrap();
        let reversed: Vec<Vec<SoftBox>> = inst.truths.iter().map(|t| t.iter().rev().cloned().collect()).collect();
        let (b, gb) = total_loss(&refs, &reversed, &inst.anchors, LOSS_INPUT, &cfg, true).unwrap();
        for (x, y) in [(a.l_conf, b.l_conf), (a.l_ciou, b.l_ciou), (a.l_cls, b.l_cls)] {
            assert!((x - y).abs() < 1e-12, "seed {seed}: {x} vs {y}");
        }
        for (x, y) in ga.unwrap().iter().zip(gb.unwrap().iter()) {
            for (u, v) in x.data().iter().zip(y.data()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }
}
