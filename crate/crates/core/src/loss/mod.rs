//! Training objective: objectness cross-entropy, CIoU box regression and
//! per-class cross-entropy, with target assignment and head gradients.

mod ciou;

pub use ciou::{aspect_term_v, ciou_alpha, ciou_loss, ciou_loss_grad, ciou_loss_with_alpha};

use serde::{Deserialize, Serialize};

use crate::detection::{decode_box, AnchorSet, HeadGeometry, ANCHORS_PER_HEAD, MAX_SIZE_LOGIT};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, SoftBox};
use crate::scalar::{sigmoid, Scalar};
use crate::tensor::Tensor;

/// Probability clamp applied before logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// Binary cross-entropy of a clamped probability against a (possibly soft)
/// target.
pub fn bce(p: f64, target: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// BCE on a logit and its derivative with respect to the logit. The
/// derivative is zero where the clamp is active.
fn bce_logit(t: f64, target: f64) -> (f64, f64) {
    let p = sigmoid(t);
    let g = if p > PROB_EPS && p < 1.0 - PROB_EPS { p - target } else { 0.0 };
    (bce(p, target), g)
}

/// Objectness loss over slots. `targets[i]` is `Some(η̂)` for responsible slots
/// and `None` otherwise (target 0).
pub fn confidence_loss(preds: &[f64], targets: &[Option<f64>], lambda_obj: f64, lambda_noobj: f64) -> f64 {
    preds
        .iter()
        .zip(targets)
        .map(|(&p, t)| match t {
            Some(t) => lambda_obj * bce(p, *t),
            None => lambda_noobj * bce(p, 0.0),
        })
        .sum()
}

/// Class loss summed over responsible slots and classes.
pub fn class_loss(preds: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    preds.iter().zip(targets).map(|(p, t)| p.iter().zip(t).map(|(&p, &t)| bce(p, t)).sum::<f64>()).sum()
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_cls: f64,
    pub lambda_ciou: f64,
    pub lambda_obj: f64,
    pub lambda_noobj: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda_cls: 1.0, lambda_ciou: 1.0, lambda_obj: 1.0, lambda_noobj: 1.0 }
    }
}

/// `l_conf` is the objectness term, weighted by `lambda_cls` in the total.
#[derive(Clone, Copy, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_conf: f64,
    pub l_ciou: f64,
    pub l_cls: f64,
    pub total: f64,
    pub lambda_cls: f64,
    pub lambda_ciou: f64,
}

impl LossBreakdown {
    fn finish(l_conf: f64, l_ciou: f64, l_cls: f64, cfg: &LossConfig) -> Self {
        LossBreakdown {
            l_conf,
            l_ciou,
            l_cls,
            total: cfg.lambda_cls * l_conf + cfg.lambda_ciou * l_ciou + l_cls,
            lambda_cls: cfg.lambda_cls,
            lambda_ciou: cfg.lambda_ciou,
        }
    }
}

/// Grid and anchors of one head.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct HeadLayout {
    pub grid: (usize, usize),
    pub geometry: HeadGeometry,
    pub anchors: [(f64, f64); ANCHORS_PER_HEAD],
    /// Fineness rank; global anchor index is `rank·3 + a`.
    pub rank: usize,
}

impl HeadLayout {
    /// Layouts for head grids (in head order) at a given input size.
    pub fn for_grids(grids: &[(usize, usize)], input: (usize, usize), anchors: &AnchorSet) -> Result<Vec<Self>> {
        let strides: Vec<f64> = grids.iter().map(|g| input.1 as f64 / g.1 as f64).collect();
        let ranks = AnchorSet::ranks(&strides);
        let sets = anchors.for_heads(&strides, input.1 as f64)?;
        Ok(grids
            .iter()
            .zip(ranks)
            .zip(sets)
            .map(|((&grid, rank), anchors)| HeadLayout {
                grid,
                geometry: HeadGeometry::new(input, grid),
                anchors,
                rank,
            })
            .collect())
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct Slot {
    pub head: usize,
    /// (row, col)
    pub cell: (usize, usize),
    pub anchor: usize,
    pub truth: SoftBox,
}

/// Responsible slots of one image. Every other slot is a no-object slot.
#[derive(Clone, PartialEq, Debug, Default)]
pub struct TargetAssignment {
    pub slots: Vec<Slot>,
    /// Truths that found no free slot.
    pub dropped: usize,
}

impl TargetAssignment {
    pub fn find(&self, head: usize, cell: (usize, usize), anchor: usize) -> Option<&Slot> {
        self.slots.iter().find(|s| s.head == head && s.cell == cell && s.anchor == anchor)
    }
}

fn canonical_order(a: &SoftBox, b: &SoftBox) -> std::cmp::Ordering {
    let key = |s: &SoftBox| [s.bbox.x, s.bbox.y, s.bbox.w, s.bbox.h, s.weight];
    key(a).iter().zip(key(b).iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or_else(|| {
        a.classes
            .iter()
            .zip(&b.classes)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    })
}

/// Best-anchor assignment: each truth goes to the anchor (over all heads)
/// whose prior, centred on the truth, overlaps it most; the cell containing the
/// truth's centre is responsible. Ties go to the lowest global anchor index.
/// When the chosen slot is taken the next-best anchor is tried.
pub fn assign_targets(truths: &[SoftBox], heads: &[HeadLayout], input: (usize, usize)) -> Result<TargetAssignment> {
    let (ih, iw) = (input.0 as f64, input.1 as f64);
    let mut sorted: Vec<&SoftBox> = truths.iter().collect();
    sorted.sort_by(|a, b| canonical_order(a, b));
    let mut out = TargetAssignment::default();
    let mut global: Vec<(usize, usize, (f64, f64))> = Vec::new();
    for (h, layout) in heads.iter().enumerate() {
        for (a, &anchor) in layout.anchors.iter().enumerate() {
            global.push((layout.rank * ANCHORS_PER_HEAD + a, h, anchor));
        }
    }
    global.sort_by_key(|g| g.0);

    for t in sorted {
        if !t.bbox.is_valid() || !t.bbox.within(iw, ih, 1e-6) {
            return Err(Error::Invalid(format!(
                "ground-truth box ({}, {}, {}, {}) lies outside the {}x{} image",
                t.bbox.x, t.bbox.y, t.bbox.w, t.bbox.h, iw, ih
            )));
        }
        let (cx, cy) = t.bbox.center();
        let shape = BBox::new(0.0, 0.0, t.bbox.w, t.bbox.h);
        let mut ranked: Vec<(f64, usize, usize, usize)> = global
            .iter()
            .map(|&(gi, h, (aw, ah))| (iou(&shape, &BBox::new(0.0, 0.0, aw, ah)), gi, h, gi % ANCHORS_PER_HEAD))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let placed = ranked.iter().find_map(|&(_, _, h, a)| {
            let l = &heads[h];
            let row = ((cy / l.geometry.stride_y).floor() as usize).min(l.grid.0 - 1);
            let col = ((cx / l.geometry.stride_x).floor() as usize).min(l.grid.1 - 1);
            out.find(h, (row, col), a).is_none().then_some((h, (row, col), a))
        });
        match placed {
            Some((head, cell, anchor)) => out.slots.push(Slot { head, cell, anchor, truth: t.clone() }),
            None => out.dropped += 1,
        }
    }
    Ok(out)
}

/// Loss over a batch of head tensors and, optionally, its gradient with
/// respect to every head. Components are averaged over the batch.
pub fn total_loss<T: Scalar>(
    heads: &[&Tensor<T>],
    truths: &[Vec<SoftBox>],
    anchors: &AnchorSet,
    input: (usize, usize),
    cfg: &LossConfig,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Vec<Tensor<T>>>)> {
    let Some(first) = heads.first() else {
        return Err(Error::Invalid("no heads".into()));
    };
    let n = first.shape().n;
    if truths.len() != n {
        return Err(Error::Invalid(format!("{} truth lists for a batch of {n}", truths.len())));
    }
    let classes = crate::detection::classes_in_head(first.shape().c)?;
    for h in heads {
        if h.shape().n != n || crate::detection::classes_in_head(h.shape().c)? != classes {
            return Err(Error::shape("loss", "heads disagree on batch size or class count"));
        }
    }
    let grids: Vec<(usize, usize)> = heads.iter().map(|h| (h.shape().h, h.shape().w)).collect();
    let layouts = HeadLayout::for_grids(&grids, input, anchors)?;
    let scale = 1.0 / n as f64;

    let mut grads: Vec<Vec<f64>> =
        if want_grad { heads.iter().map(|h| vec![0.0; h.shape().len()]).collect() } else { Vec::new() };
    let (mut l_conf, mut l_ciou, mut l_cls) = (0.0, 0.0, 0.0);
    let stride_c = classes + 5;

    for (item, item_truths) in truths.iter().enumerate() {
        for t in item_truths {
            if t.classes.len() != classes {
                return Err(Error::Invalid(format!(
                    "truth has {} class entries, heads have {classes}",
                    t.classes.len()
                )));
            }
        }
        let assignment = assign_targets(item_truths, &layouts, input)?;
        let mut target_of: Vec<Vec<Option<&Slot>>> =
            heads.iter().map(|h| vec![None; ANCHORS_PER_HEAD * h.shape().h * h.shape().w]).collect();
        for s in &assignment.slots {
            let g = layouts[s.head].grid;
            target_of[s.head][(s.anchor * g.0 + s.cell.0) * g.1 + s.cell.1] = Some(s);
        }

        for (hi, head) in heads.iter().enumerate() {
            let sh = head.shape();
            let plane = sh.h * sh.w;
            let base_item = item * sh.c * plane;
            let data = head.data();
            let idx = |a: usize, k: usize, y: usize, x: usize| base_item + (a * stride_c + k) * plane + y * sh.w + x;
            let at = |i: usize| data[i].as_f64();
            let layout = &layouts[hi];
            for a in 0..ANCHORS_PER_HEAD {
                for y in 0..sh.h {
                    for x in 0..sh.w {
                        let oi = idx(a, 4, y, x);
                        match target_of[hi][(a * sh.h + y) * sh.w + x] {
                            None => {
                                let (l, g) = bce_logit(at(oi), 0.0);
                                l_conf += cfg.lambda_noobj * l;
                                if want_grad {
                                    grads[hi][oi] += scale * cfg.lambda_cls * cfg.lambda_noobj * g;
                                }
                            }
                            Some(slot) => {
                                let w = slot.truth.weight;
                                let (l, g) = bce_logit(at(oi), w);
                                l_conf += cfg.lambda_obj * l;

                                let t = [0, 1, 2, 3].map(|k| at(idx(a, k, y, x)));
                                let pred = decode_box(t, (y, x), layout.anchors[a], layout.geometry);
                                let (lc, dbox) = ciou_loss_grad(&pred, &slot.truth.bbox);
                                l_ciou += w * lc;

                                let mut cls_g = vec![0.0; classes];
                                for (c, g) in cls_g.iter_mut().enumerate() {
                                    let (l, gc) = bce_logit(at(idx(a, 5 + c, y, x)), w * slot.truth.classes[c]);
                                    l_cls += l;
                                    *g = gc;
                                }

                                if want_grad {
                                    let gr = &mut grads[hi];
                                    gr[oi] += scale * cfg.lambda_cls * cfg.lambda_obj * g;
                                    let k = scale * cfg.lambda_ciou * w;
                                    let geo = layout.geometry;
                                    let sx = sigmoid(t[0]);
                                    let sy = sigmoid(t[1]);
                                    gr[idx(a, 0, y, x)] += k * dbox[0] * geo.stride_x * sx * (1.0 - sx);
                                    gr[idx(a, 1, y, x)] += k * dbox[1] * geo.stride_y * sy * (1.0 - sy);
                                    if t[2] < MAX_SIZE_LOGIT {
                                        gr[idx(a, 2, y, x)] += k * (dbox[2] - 0.5 * dbox[0]) * pred.w;
                                    }
                                    if t[3] < MAX_SIZE_LOGIT {
                                        gr[idx(a, 3, y, x)] += k * (dbox[3] - 0.5 * dbox[1]) * pred.h;
                                    }
                                    for (c, g) in cls_g.iter().enumerate() {
                                        gr[idx(a, 5 + c, y, x)] += scale * g;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let breakdown = LossBreakdown::finish(l_conf * scale, l_ciou * scale, l_cls * scale, cfg);
    if !(breakdown.total.is_finite()) {
        return Err(Error::Invalid("loss is not finite".into()));
    }
    let grads = want_grad.then(|| {
        grads
            .into_iter()
            .zip(heads)
            .map(|(g, h)| Tensor::from_vec(h.shape(), g.into_iter().map(T::lit).collect()).expect("same shape"))
            .collect()
    });
    Ok((breakdown, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn scalar_examples() {
        assert!((confidence_loss(&[0.5], &[Some(1.0)], 1.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-6);
        assert!((confidence_loss(&[0.9], &[None], 1.0, 1.0) - std::f64::consts::LN_10).abs() < 1e-6);
        assert!(confidence_loss(&[1.0, 0.0], &[Some(1.0), None], 1.0, 1.0) <= 4.0 * PROB_EPS);
        assert!((class_loss(&[vec![0.5, 0.5]], &[vec![1.0, 0.0]]) - 1.386294).abs() < 1e-6);
        assert!((class_loss(&[vec![0.5, 0.5]], &[vec![0.5, 0.5]]) - 1.386294).abs() < 1e-6);
        assert!(class_loss(&[vec![1.0, 0.0]], &[vec![1.0, 0.0]]) < 1e-6);
    }

    fn layouts_512() -> Vec<HeadLayout> {
        HeadLayout::for_grids(&[(16, 16), (32, 32)], (512, 512), &AnchorSet::default()).unwrap()
    }

    #[test]
    fn centre_truth_goes_to_best_anchor() {
        let l = layouts_512();
        let t = SoftBox::hard(BBox::from_center(256.0, 256.0, 20.0, 20.0), 0, 2);
        let a = assign_targets(&[t], &l, (512, 512)).unwrap();
        assert_eq!(a.slots.len(), 1);
        // 20×20 is closest to the 24×24 prior, the middle anchor of the finer head.
        assert_eq!((a.slots[0].head, a.slots[0].cell, a.slots[0].anchor), (1, (16, 16), 1));
    }

    #[test]
    fn equal_anchors_tie_to_lowest_index() {
        let anchors = AnchorSet::new(512.0, vec![(30.0, 30.0); 6]).unwrap();
        let l = HeadLayout::for_grids(&[(16, 16), (32, 32)], (512, 512), &anchors).unwrap();
        let t = SoftBox::hard(BBox::new(10.0, 10.0, 20.0, 20.0), 0, 1);
        let a = assign_targets(&[t], &l, (512, 512)).unwrap();
        assert_eq!((a.slots[0].head, a.slots[0].anchor), (1, 0));
    }

    #[test]
    fn outside_image_is_an_error() {
        let t = SoftBox::hard(BBox::new(500.0, 10.0, 20.0, 20.0), 0, 1);
        assert!(assign_targets(&[t], &layouts_512(), (512, 512)).is_err());
    }

    #[test]
    fn no_truths_low_confidence_is_near_zero() {
        let h1 = Tensor::<f64>::full(Shape::new(1, 21, 2, 2), -30.0);
        let h2 = Tensor::<f64>::full(Shape::new(1, 21, 4, 4), -30.0);
        let (b, _) =
            total_loss(&[&h1, &h2], &[vec![]], &AnchorSet::default(), (64, 64), &LossConfig::default(), false).unwrap();
        // Clamping leaves about ε per slot.
        assert!(b.total <= 2.0 * PROB_EPS * 60.0);
        assert_eq!(b.total, b.l_conf + b.l_ciou + b.l_cls);
    }
}
