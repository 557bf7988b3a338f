//! Generators and oracles shared by the integration suites.
#![allow(dead_code)]

use std::collections::HashMap;

use btp_core::augment::{augment_sample, AugmentConfig, SoftSample};
use btp_core::detection::{AnchorSet, DetectionRecord};
use btp_core::eval::GroundTruth;
use btp_core::geometry::{iou, BBox, SoftBox};
use btp_core::loss::{aspect_term_v, assign_targets, ciou_alpha, ciou_loss_with_alpha, HeadLayout, LossConfig};
use btp_core::tensor::{
    activate, activate_backward, batch_norm, batch_norm_backward, concat_channels, concat_channels_backward, conv2d,
    conv2d_backward, depthwise_conv2d, depthwise_conv2d_backward, max_pool2, max_pool2_backward, pointwise_conv2d,
    pointwise_conv2d_backward, upsample2, upsample2_backward, Activation, BnMode, BnParams, Shape, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a − b|` relative to the larger magnitude, floored at 1 so gradients
/// near zero are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Clone, Debug)]
pub struct EvalInstance {
    pub classes: Vec<String>,
    pub dets: Vec<DetectionRecord>,
    pub truths: Vec<GroundTruth>,
}

pub fn random_box(rng: &mut ChaCha8Rng) -> BBox<f64> {
    BBox::new(
        rng.random_range(0.0..50.0),
        rng.random_range(0.0..50.0),
        rng.random_range(0.5..30.0),
        rng.random_range(0.5..30.0),
    )
}

/// ≤5 images, ≤10 detections, 1..=5 truths, two classes, coarse scores so
/// ties occur.
pub fn random_eval_instance(rng: &mut ChaCha8Rng) -> EvalInstance {
    let classes = vec!["a".to_string(), "b".to_string()];
    let nd = rng.random_range(0..=10);
    let dets = (0..nd)
        .map(|_| {
            let c = rng.random_range(0..2);
            let b = random_box(rng);
            DetectionRecord {
                image: format!("img{}", rng.random_range(0..5)),
                class_id: c,
                class_name: classes[c].clone(),
                score: rng.random_range(1..10) as f64 / 10.0,
                x: b.x,
                y: b.y,
                w: b.w,
                h: b.h,
            }
        })
        .collect();
    let nt = rng.random_range(1..=5);
    let truths = (0..nt)
        .map(|_| GroundTruth {
            image: format!("img{}", rng.random_range(0..5)),
            class_id: rng.random_range(0..2),
            bbox: random_box(rng),
        })
        .collect();
    EvalInstance { classes, dets, truths }
}

/// Independent AP: sort, sweep, and for each hit take the best precision at
/// any later cut, divided by the truth count.
pub fn oracle_ap(inst: &EvalInstance, class: usize, thr: f64) -> Option<f64> {
    let truths: Vec<&GroundTruth> = inst.truths.iter().filter(|t| t.class_id == class).collect();
    if truths.is_empty() {
        return None;
    }
    let mut dets: Vec<&DetectionRecord> = inst.dets.iter().filter(|d| d.class_id == class).collect();
    dets.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.x.partial_cmp(&b.x).unwrap())
            .then(a.y.partial_cmp(&b.y).unwrap())
            .then(a.w.partial_cmp(&b.w).unwrap())
            .then(a.h.partial_cmp(&b.h).unwrap())
            .then(a.image.cmp(&b.image))
    });
    let mut used = vec![false; truths.len()];
    let mut hits = Vec::new();
    for d in &dets {
        let mut best: Option<usize> = None;
        for (i, t) in truths.iter().enumerate() {
            if used[i] || t.image != d.image {
                continue;
            }
            let v = iou(&d.bbox(), &t.bbox);
            if v >= thr && best.is_none_or(|j| v > iou(&d.bbox(), &truths[j].bbox)) {
                best = Some(i);
            }
        }
        if let Some(i) = best {
            used[i] = true;
        }
        hits.push(best.is_some());
    }
    let precision_at = |k: usize| hits[..=k].iter().filter(|&&h| h).count() as f64 / (k + 1) as f64;
    let mut ap = 0.0;
    for k in 0..hits.len() {
        if hits[k] {
            let best = (k..hits.len()).map(precision_at).fold(0.0, f64::max);
            ap += best / truths.len() as f64;
        }
    }
    Some(ap)
}

/// Oracle mAP over classes with truths.
pub fn oracle_map(inst: &EvalInstance, thr: f64) -> f64 {
    let aps: Vec<f64> = (0..inst.classes.len()).filter_map(|c| oracle_ap(inst, c, thr)).collect();
    aps.iter().sum::<f64>() / aps.len() as f64
}

// ---------------------------------------------------------------------------
// Augmentation

pub const AUG_SIDE: usize = 24;

pub fn random_sample(seed: u64, w: usize, h: usize) -> SoftSample<f32> {
    let mut rng = rng(seed);
    let image = Tensor::from_fn(Shape::new(1, 3, h, w), |_, _, _, _| rng.random_range(0.0..=1.0f32));
    let boxes = (0..rng.random_range(0..4))
        .map(|_| {
            let bw = rng.random_range(3.0..w as f64 / 2.0);
            let bh = rng.random_range(3.0..h as f64 / 2.0);
            let x = rng.random_range(0.0..w as f64 - bw);
            let y = rng.random_range(0.0..h as f64 - bh);
            SoftBox::hard(BBox::new(x, y, bw, bh), rng.random_range(0..3), 3)
        })
        .collect();
    SoftSample::new(image, boxes).unwrap()
}

/// Mixed source sizes so the resize step is exercised.
pub fn sample_pool() -> Vec<SoftSample<f32>> {
    (0..6).map(|i| random_sample(100 + i, AUG_SIDE + 4 * i as usize, AUG_SIDE + 2 * (i as usize % 3))).collect()
}

/// Bit 0 geometric, 1 mixup, 2 cutmix, 3 mosaic.
pub fn aug_config(bits: u8) -> AugmentConfig {
    AugmentConfig {
        geometric: bits & 1 != 0,
        mixup: bits & 2 != 0,
        cutmix: bits & 4 != 0,
        mosaic: bits & 8 != 0,
        prob: 0.7,
        rotate_prob: 0.3,
        ..AugmentConfig::default()
    }
}

pub fn run_pipeline(pool: &[SoftSample<f32>], bits: u8, index: usize, seed: u64) -> SoftSample<f32> {
    let pick = |i: usize| -> btp_core::Result<SoftSample<f32>> { Ok(pool[i].clone()) };
    augment_sample(&pick, pool.len(), index, (AUG_SIDE, AUG_SIDE), &aug_config(bits), seed).unwrap()
}

/// Runs `n` random pipelines and checks the output invariants: class vectors
/// sum to 1, pixels stay in [0, 1], boxes are valid and touch the frame, and
/// a rerun with the same seed is identical.
pub fn check_pipelines(n: usize, seed: u64) -> Result<(), String> {
    let pool = sample_pool();
    let mut rng = rng(seed);
    let side = AUG_SIDE as f64;
    for trial in 0..n {
        let bits = rng.random_range(0..16u8);
        let index = rng.random_range(0..pool.len());
        let s: u64 = rng.random();
        let out = run_pipeline(&pool, bits, index, s);
        let ctx = format!("trial {trial}, config bits {bits:04b}, seed {s}");
        if out.image.shape() != Shape::new(1, 3, AUG_SIDE, AUG_SIDE) {
            return Err(format!("{ctx}: shape {}", out.image.shape()));
        }
        if !out.image.data().iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(format!("{ctx}: pixel out of range"));
        }
        for b in &out.boxes {
            let sum: f64 = b.classes.iter().sum();
            if (sum - 1.0).abs() >= 1e-6 {
                return Err(format!("{ctx}: class vector sums to {sum}"));
            }
            if !(0.0..=1.0).contains(&b.weight) || !b.bbox.is_valid() {
                return Err(format!("{ctx}: bad box {b:?}"));
            }
            if b.bbox.clip(side, side).map_or(0.0, |c| c.area()) <= 0.0 {
                return Err(format!("{ctx}: box {:?} misses the frame", b.bbox));
            }
        }
        if run_pipeline(&pool, bits, index, s) != out {
            return Err(format!("{ctx}: not reproducible"));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Layer gradients: each check returns the worst `rel_err` between central
// differences of L = Σ g ⊙ f(x) and the analytic backward.

const H: f64 = 1e-5;

fn rand_tensor(rng: &mut ChaCha8Rng, s: Shape) -> Tensor<f64> {
    Tensor::from_fn(s, |_, _, _, _| rng.random_range(-1.0..1.0))
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn worst_vs_fd(x: &Tensor<f64>, analytic: &Tensor<f64>, f: &dyn Fn(&Tensor<f64>) -> f64) -> f64 {
    assert_eq!(x.shape(), analytic.shape());
    let mut worst: f64 = 0.0;
    for i in 0..x.data().len() {
        let mut p = x.clone();
        p.data_mut()[i] += H;
        let up = f(&p);
        p.data_mut()[i] -= 2.0 * H;
        let fd = (up - f(&p)) / (2.0 * H);
        worst = worst.max(rel_err(fd, analytic.data()[i]));
    }
    worst
}

fn conv_geometry(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    let k = [1, 3, 5][rng.random_range(0..3)];
    let stride = rng.random_range(1..=2);
    let pad = rng.random_range(0..=k / 2);
    (k, stride, pad)
}

pub fn conv_fd(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let (k, stride, pad) = conv_geometry(&mut rng);
    let (n, c, m, hw) =
        (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4), rng.random_range(5..8));
    let x = rand_tensor(&mut rng, Shape::new(n, c, hw, hw));
    let w = rand_tensor(&mut rng, Shape::new(m, c, k, k));
    let bias: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = conv2d(&x, &w, Some(&bias), stride, pad).unwrap();
    let g = rand_tensor(&mut rng, y.shape());
    let grads = conv2d_backward(&x, &w, &g, stride, pad, true).unwrap();
    let gi = worst_vs_fd(&x, &grads.input, &|x| dot(&g, &conv2d(x, &w, Some(&bias), stride, pad).unwrap()));
    let gw = worst_vs_fd(&w, &grads.weights, &|w| dot(&g, &conv2d(&x, w, Some(&bias), stride, pad).unwrap()));
    let mut gb: f64 = 0.0;
    for (j, a) in grads.bias.unwrap().iter().enumerate() {
        let mut up = bias.clone();
        up[j] += H;
        let mut down = bias.clone();
        down[j] -= H;
        let fd = (dot(&g, &conv2d(&x, &w, Some(&up), stride, pad).unwrap())
            - dot(&g, &conv2d(&x, &w, Some(&down), stride, pad).unwrap()))
            / (2.0 * H);
        gb = gb.max(rel_err(fd, *a));
    }
    gi.max(gw).max(gb)
}

pub fn depthwise_fd(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let (k, stride, pad) = conv_geometry(&mut rng);
    let (n, c, hw) = (rng.random_range(1..3), rng.random_range(1..5), rng.random_range(5..9));
    let x = rand_tensor(&mut rng, Shape::new(n, c, hw, hw));
    let w = rand_tensor(&mut rng, Shape::new(c, 1, k, k));
    let y = depthwise_conv2d(&x, &w, stride, pad).unwrap();
    let g = rand_tensor(&mut rng, y.shape());
    let grads = depthwise_conv2d_backward(&x, &w, &g, stride, pad).unwrap();
    let gi = worst_vs_fd(&x, &grads.input, &|x| dot(&g, &depthwise_conv2d(x, &w, stride, pad).unwrap()));
    let gw = worst_vs_fd(&w, &grads.weights, &|w| dot(&g, &depthwise_conv2d(&x, w, stride, pad).unwrap()));
    gi.max(gw)
}

pub fn pointwise_fd(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let (n, c, m, hw) =
        (rng.random_range(1..3), rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..6));
    let x = rand_tensor(&mut rng, Shape::new(n, c, hw, hw));
    let w = rand_tensor(&mut rng, Shape::new(m, c, 1, 1));
    let y = pointwise_conv2d(&x, &w, None).unwrap();
    let g = rand_tensor(&mut rng, y.shape());
    let grads = pointwise_conv2d_backward(&x, &w, &g, false).unwrap();
    let gi = worst_vs_fd(&x, &grads.input, &|x| dot(&g, &pointwise_conv2d(x, &w, None).unwrap()));
    let gw = worst_vs_fd(&w, &grads.weights, &|w| dot(&g, &pointwise_conv2d(&x, w, None).unwrap()));
    gi.max(gw)
}

pub fn batch_norm_fd(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let (n, c, hw) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(2..5));
    let x = rand_tensor(&mut rng, Shape::new(n, c, hw, hw));
    let mut params = BnParams::<f64>::identity(c);
    for j in 0..c {
        params.gamma[j] = rng.random_range(0.5..1.5);
        params.beta[j] = rng.random_range(-0.5..0.5);
    }
    let (y, cache) = batch_norm(&x, &params, BnMode::Train).unwrap();
    let g = rand_tensor(&mut rng, y.shape());
    let grads = batch_norm_backward(&cache, &params.gamma, &g).unwrap();
    let loss = |x: &Tensor<f64>, p: &BnParams<f64>| dot(&g, &batch_norm(x, p, BnMode::Train).unwrap().0);
    let mut worst = worst_vs_fd(&x, &grads.input, &|x| loss(x, &params));
    for j in 0..c {
        let bump = |gamma: bool, d: f64| {
            let mut p = params.clone();
            if gamma {
                p.gamma[j] += d
            } else {
                p.beta[j] += d
            }
            loss(&x, &p)
        };
        let dg = (bump(true, H) - bump(true, -H)) / (2.0 * H);
        let db = (bump(false, H) - bump(false, -H)) / (2.0 * H);
        worst = worst.max(rel_err(dg, grads.gamma[j])).max(rel_err(db, grads.beta[j]));
    }
    worst
}

pub const ACTIVATIONS: [Activation; 6] =
    [Activation::Linear, Activation::Relu, Activation::LEAKY, Activation::ELU, Activation::Swish, Activation::Mish];

/// Inputs keep clear of the kinks at 0.
pub fn activation_fd(f: Activation, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let x = Tensor::from_fn(Shape::new(1, 2, 3, 3), |_, _, _, _| {
        let v: f64 = rng.random_range(0.01..6.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    });
    let g = rand_tensor(&mut rng, x.shape());
    let a = activate_backward(&x, &g, f).unwrap();
    worst_vs_fd(&x, &a, &|x| dot(&g, &activate(x, f)))
}

pub fn max_pool_fd(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let (n, c, hw) = (rng.random_range(1..3), rng.random_range(1..4), 2 * rng.random_range(1..4));
    let x = rand_tensor(&mut rng, Shape::new(n, c, hw, hw));
    let g = rand_tensor(&mut rng, max_pool2(&x).unwrap().shape());
    let a = max_pool2_backward(&x, &g).unwrap();
    worst_vs_fd(&x, &a, &|x| dot(&g, &max_pool2(x).unwrap()))
}

pub fn upsample_fd(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let (n, c, hw) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..5));
    let x = rand_tensor(&mut rng, Shape::new(n, c, hw, hw));
    let g = rand_tensor(&mut rng, upsample2(&x).shape());
    let a = upsample2_backward(&g).unwrap();
    worst_vs_fd(&x, &a, &|x| dot(&g, &upsample2(x)))
}

pub fn concat_fd(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let (n, c, c2, hw) =
        (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..5));
    let x = rand_tensor(&mut rng, Shape::new(n, c, hw, hw));
    let y = rand_tensor(&mut rng, Shape::new(n, c2, hw, hw));
    let g = rand_tensor(&mut rng, Shape::new(n, c + c2, hw, hw));
    let parts = concat_channels_backward(&g, &[c, c2]).unwrap();
    let a = worst_vs_fd(&x, &parts[0], &|x| dot(&g, &concat_channels(&[x, &y]).unwrap()));
    let b = worst_vs_fd(&y, &parts[1], &|y| dot(&g, &concat_channels(&[&x, y]).unwrap()));
    a.max(b)
}

// ---------------------------------------------------------------------------
// Head loss oracle: the weighted objective written out directly, with the
// CIoU trade-off α frozen per slot (the analytic gradient treats it as a
// constant).

pub const LOSS_INPUT: (usize, usize) = (64, 64);

pub struct LossInstance {
    pub heads: Vec<Tensor<f64>>,
    pub truths: Vec<Vec<SoftBox>>,
    pub anchors: AnchorSet,
    pub cfg: LossConfig,
}

/// Two images, 2 classes, 2×2 and 4×4 heads on a 64-pixel input, 1..=3
/// truths per image with random soft classes and weights.
pub fn random_loss_instance(seed: u64) -> LossInstance {
    let mut rng = rng(seed);
    let heads = vec![
        Tensor::from_fn(Shape::new(2, 21, 2, 2), |_, _, _, _| rng.random_range(-2.0..2.0)),
        Tensor::from_fn(Shape::new(2, 21, 4, 4), |_, _, _, _| rng.random_range(-2.0..2.0)),
    ];
    let anchors =
        AnchorSet::new(64.0, vec![(6.0, 8.0), (10.0, 10.0), (14.0, 9.0), (20.0, 24.0), (30.0, 28.0), (40.0, 44.0)])
            .unwrap();
    let truths = (0..2)
        .map(|_| {
            (0..rng.random_range(1..=3))
                .map(|_| {
                    let w = rng.random_range(4.0..40.0);
                    let h = rng.random_range(4.0..40.0);
                    let bbox = BBox::new(rng.random_range(0.0..64.0 - w), rng.random_range(0.0..64.0 - h), w, h);
                    let mut b = SoftBox::hard(bbox, 0, 2);
                    let p: f64 = rng.random_range(0.0..1.0);
                    b.classes = vec![p, 1.0 - p];
                    b.weight = rng.random_range(0.2..=1.0);
                    b
                })
                .collect()
        })
        .collect();
    let cfg = LossConfig {
        lambda_cls: rng.random_range(0.2..1.5),
        lambda_ciou: rng.random_range(0.2..1.5),
        lambda_obj: rng.random_range(0.2..1.5),
        lambda_noobj: rng.random_range(0.2..1.5),
    };
    LossInstance { heads, truths, anchors, cfg }
}

fn sig(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

type Key = (usize, usize, usize, usize, usize);

fn decoded(head: &Tensor<f64>, n: usize, a: usize, y: usize, x: usize, l: &HeadLayout) -> BBox<f64> {
    let c = head.shape().c / 3;
    let t = |k| head.at(n, a * c + k, y, x);
    let cx = (x as f64 + sig(t(0))) * l.geometry.stride_x;
    let cy = (y as f64 + sig(t(1))) * l.geometry.stride_y;
    let (w, h) = (l.anchors[a].0 * t(2).exp(), l.anchors[a].1 * t(3).exp());
    BBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
}

pub fn layouts(inst: &LossInstance) -> Vec<HeadLayout> {
    let grids: Vec<(usize, usize)> = inst.heads.iter().map(|h| (h.shape().h, h.shape().w)).collect();
    HeadLayout::for_grids(&grids, LOSS_INPUT, &inst.anchors).unwrap()
}

pub fn oracle_alphas(heads: &[Tensor<f64>], truths: &[Vec<SoftBox>], layouts: &[HeadLayout]) -> HashMap<Key, f64> {
    let mut out = HashMap::new();
    for (n, t) in truths.iter().enumerate() {
        for s in assign_targets(t, layouts, LOSS_INPUT).unwrap().slots {
            let (y, x) = s.cell;
            let p = decoded(&heads[s.head], n, s.anchor, y, x, &layouts[s.head]);
            let alpha = ciou_alpha(iou(&p, &s.truth.bbox), aspect_term_v(&p, &s.truth.bbox));
            out.insert((n, s.head, y, x, s.anchor), alpha);
        }
    }
    out
}

/// Component sums `(conf, box, cls)` before weighting and batch averaging.
pub fn oracle_components(
    heads: &[Tensor<f64>],
    truths: &[Vec<SoftBox>],
    layouts: &[HeadLayout],
    cfg: &LossConfig,
    alphas: &HashMap<Key, f64>,
) -> (f64, f64, f64) {
    let (mut conf, mut bx, mut cls) = (0.0, 0.0, 0.0);
    for (n, t) in truths.iter().enumerate() {
        let assignment = assign_targets(t, layouts, LOSS_INPUT).unwrap();
        for (hi, head) in heads.iter().enumerate() {
            let s = head.shape();
            let c = s.c / 3;
            for a in 0..3 {
                for y in 0..s.h {
                    for x in 0..s.w {
                        let obj = sig(head.at(n, a * c + 4, y, x));
                        match assignment.find(hi, (y, x), a) {
                            None => conf += cfg.lambda_noobj * bce(obj, 0.0),
                            Some(slot) => {
                                let w = slot.truth.weight;
                                conf += cfg.lambda_obj * bce(obj, w);
                                let p = decoded(head, n, a, y, x, &layouts[hi]);
                                let alpha = alphas[&(n, hi, y, x, a)];
                                bx += w * ciou_loss_with_alpha(&p, &slot.truth.bbox, alpha);
                                for k in 0..c - 5 {
                                    cls += bce(sig(head.at(n, a * c + 5 + k, y, x)), w * slot.truth.classes[k]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (conf, bx, cls)
}

/// Weighted total, averaged over the batch.
pub fn oracle_loss(
    heads: &[Tensor<f64>],
    truths: &[Vec<SoftBox>],
    layouts: &[HeadLayout],
    cfg: &LossConfig,
    alphas: &HashMap<Key, f64>,
) -> f64 {
    let (conf, bx, cls) = oracle_components(heads, truths, layouts, cfg, alphas);
    (cfg.lambda_cls * conf + cfg.lambda_ciou * bx + cls) / truths.len() as f64
}

/// Checks `total_loss` on `inst` under `cfg`: the reported components against
/// the oracle (within 1e-9), then every head gradient against central
/// differences of the oracle. Returns the worst gradient `rel_err`.
pub fn loss_fd(inst: &LossInstance, cfg: &LossConfig) -> Result<f64, String> {
    use btp_core::loss::total_loss;
    let refs: Vec<&Tensor<f64>> = inst.heads.iter().collect();
    let (value, grads) =
        total_loss(&refs, &inst.truths, &inst.anchors, LOSS_INPUT, cfg, true).map_err(|e| e.to_string())?;
    let grads = grads.ok_or("no gradients returned")?;
    let layouts = layouts(inst);
    let frozen = oracle_alphas(&inst.heads, &inst.truths, &layouts);
    let n = inst.truths.len() as f64;
    let (conf, bx, cls) = oracle_components(&inst.heads, &inst.truths, &layouts, cfg, &frozen);
    for (name, got, want) in
        [("l_conf", value.l_conf, conf / n), ("l_ciou", value.l_ciou, bx / n), ("l_cls", value.l_cls, cls / n)]
    {
        if (got - want).abs() > 1e-9 * want.abs().max(1.0) {
            return Err(format!("{name}: library {got}, oracle {want}"));
        }
    }
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for which in 0..inst.heads.len() {
        for i in 0..inst.heads[which].shape().len() {
            let mut p = inst.heads.clone();
            p[which].data_mut()[i] += h;
            let mut m = inst.heads.clone();
            m[which].data_mut()[i] -= h;
            let fd = (oracle_loss(&p, &inst.truths, &layouts, cfg, &frozen)
                - oracle_loss(&m, &inst.truths, &layouts, cfg, &frozen))
                / (2.0 * h);
            worst = worst.max(rel_err(fd, grads[which].data()[i]));
        }
    }
    Ok(worst)
}

/// Loss weightings that isolate each component: class only, objectness plus
/// class, box plus class, and the instance's own random mix.
pub fn isolating_configs(inst: &LossInstance) -> [LossConfig; 4] {
    let base = inst.cfg;
    [
        LossConfig { lambda_cls: 0.0, lambda_ciou: 0.0, ..base },
        LossConfig { lambda_cls: 1.0, lambda_ciou: 0.0, ..base },
        LossConfig { lambda_cls: 0.0, lambda_ciou: 1.0, ..base },
        base,
    ]
}
