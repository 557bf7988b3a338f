//! Detection metrics: greedy matching, precision/recall curves, AP, mAP and
//! average IoU.

mod plot;

pub use plot::pr_curve_svg;

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{parse_voc, DatasetIndex};
use crate::detection::DetectionRecord;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

pub const DEFAULT_MATCH_IOU: f64 = 0.5;

/// Ground truth of every sample in a dataset directory, keyed by the image
/// file name recorded in each annotation.
pub fn dataset_ground_truth(index: &DatasetIndex) -> Result<Vec<GroundTruth>> {
    let mut out = Vec::new();
    for s in &index.samples {
        let text = std::fs::read_to_string(&s.annotation).map_err(|e| Error::io(&s.annotation, e))?;
        let ann = parse_voc(&text)?;
        for (b, o) in index.classes.soft_boxes(&ann)?.into_iter().zip(&ann.objects) {
            out.push(GroundTruth { image: ann.image.clone(), class_id: b.class_id(), bbox: o.bbox });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApMode {
    /// Area under the precision envelope.
    #[default]
    AllPoint,
    /// Mean envelope precision at recall 0, 0.1, ..., 1.
    ElevenPoint,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image: String,
    pub class_id: usize,
    pub bbox: BBox<f64>,
}

/// Outcome of matching one image's detections of one class.
#[derive(Clone, PartialEq, Debug, Default)]
pub struct MatchResult {
    /// Indexed like the input detections.
    pub tp: Vec<bool>,
    pub matched_truth: Vec<Option<usize>>,
    pub iou: Vec<f64>,
    pub truth_matched: Vec<bool>,
}

/// Ranking used everywhere: score descending, then x ascending, then the
/// remaining box fields, so equal-score detections order by content.
fn rank(a: (f64, &BBox<f64>), b: (f64, &BBox<f64>)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then(a.1.x.total_cmp(&b.1.x))
        .then(a.1.y.total_cmp(&b.1.y))
        .then(a.1.w.total_cmp(&b.1.w))
        .then(a.1.h.total_cmp(&b.1.h))
}

/// Greedy matching of `(score, box)` detections to truths of one class in one
/// image: in rank order, each detection takes the unmatched truth of highest
/// IoU at or above `threshold` (lowest index on ties).
pub fn match_detections(dets: &[(f64, BBox<f64>)], truths: &[BBox<f64>], threshold: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| rank((dets[i].0, &dets[i].1), (dets[j].0, &dets[j].1)).then(i.cmp(&j)));
    let mut r = MatchResult {
        tp: vec![false; dets.len()],
        matched_truth: vec![None; dets.len()],
        iou: vec![0.0; dets.len()],
        truth_matched: vec![false; truths.len()],
    };
    for i in order {
        let mut best: Option<(usize, f64)> = None;
        for (t, tb) in truths.iter().enumerate() {
            if r.truth_matched[t] {
                continue;
            }
            let v = iou(&dets[i].1, tb);
            if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((t, v));
            }
        }
        if let Some((t, v)) = best {
            r.truth_matched[t] = true;
            r.tp[i] = true;
            r.matched_truth[i] = Some(t);
            r.iou[i] = v;
        }
    }
    r
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Cumulative precision/recall after each ranked detection.
pub fn pr_curve(ranked_tp: &[bool], num_truths: usize) -> Vec<PrPoint> {
    let mut tp = 0usize;
    ranked_tp
        .iter()
        .enumerate()
        .map(|(k, &hit)| {
            tp += usize::from(hit);
            PrPoint {
                recall: if num_truths == 0 { 0.0 } else { tp as f64 / num_truths as f64 },
                precision: tp as f64 / (k + 1) as f64,
            }
        })
        .collect()
}

/// AP straight from ranked hit flags. All-point AP is accumulated as
/// `envelope / num_truths` per hit, which avoids rounding from recall
/// differences; 11-point goes through [`average_precision`].
pub fn ranked_ap(ranked_tp: &[bool], num_truths: usize, mode: ApMode) -> f64 {
    let curve = pr_curve(ranked_tp, num_truths);
    if mode == ApMode::ElevenPoint || num_truths == 0 {
        return average_precision(&curve, mode);
    }
    let mut best = 0.0f64;
    let mut env = vec![0.0; curve.len()];
    for (i, p) in curve.iter().enumerate().rev() {
        best = best.max(p.precision);
        env[i] = best;
    }
    let n = num_truths as f64;
    ranked_tp.iter().zip(&env).filter(|(&hit, _)| hit).map(|(_, &e)| e / n).fold(0.0, |a, b| a + b)
}

/// AP of a curve with non-decreasing recall. An empty curve scores 0.
pub fn average_precision(curve: &[PrPoint], mode: ApMode) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    let mut envelope: Vec<f64> = curve.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    match mode {
        ApMode::AllPoint => {
            let mut prev = 0.0;
            let mut ap = 0.0;
            for (p, &e) in curve.iter().zip(&envelope) {
                ap += (p.recall - prev) * e;
                prev = p.recall;
            }
            ap
        }
        ApMode::ElevenPoint => {
            (0..=10)
                .map(|t| {
                    let t = t as f64 / 10.0;
                    curve.iter().zip(&envelope).find(|(p, _)| p.recall >= t).map_or(0.0, |(_, &e)| e)
                })
                .sum::<f64>()
                / 11.0
        }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: usize,
    pub name: String,
    pub num_truths: usize,
    pub num_detections: usize,
    pub true_positives: usize,
    /// `None` when the class has no ground truth.
    pub ap: Option<f64>,
    pub curve: Vec<PrPoint>,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassReport>,
    /// Mean AP over classes with ground truth.
    pub map: f64,
    /// Mean IoU of all true-positive matches; 0 without any.
    pub average_iou: f64,
    pub iou_threshold: f64,
    pub mode: ApMode,
}

/// Scores detections against ground truth. `class_names` fixes the class
/// universe; images are matched by name.
pub fn evaluate(
    dets: &[DetectionRecord],
    truths: &[GroundTruth],
    class_names: &[String],
    iou_threshold: f64,
    mode: ApMode,
) -> Result<EvalReport> {
    let nc = class_names.len();
    if let Some(d) = dets.iter().find(|d| d.class_id >= nc) {
        return Err(Error::Invalid(format!("detection class {} outside {nc} classes", d.class_id)));
    }
    if let Some(t) = truths.iter().find(|t| t.class_id >= nc) {
        return Err(Error::Invalid(format!("ground-truth class {} outside {nc} classes", t.class_id)));
    }
    let mut reports = Vec::with_capacity(nc);
    let (mut iou_sum, mut iou_n) = (0.0, 0usize);
    for (c, name) in class_names.iter().enumerate() {
        let mut by_image: HashMap<&str, Vec<BBox<f64>>> = HashMap::new();
        let mut n_truth = 0;
        for t in truths.iter().filter(|t| t.class_id == c) {
            by_image.entry(t.image.as_str()).or_default().push(t.bbox);
            n_truth += 1;
        }
        let mut ranked: Vec<&DetectionRecord> = dets.iter().filter(|d| d.class_id == c).collect();
        ranked.sort_by(|a, b| rank((a.score, &a.bbox()), (b.score, &b.bbox())).then(a.image.cmp(&b.image)));

        let mut matched: HashMap<&str, Vec<bool>> = by_image.iter().map(|(k, v)| (*k, vec![false; v.len()])).collect();
        let mut flags = Vec::with_capacity(ranked.len());
        for d in &ranked {
            let db = d.bbox();
            let mut best: Option<(usize, f64)> = None;
            if let (Some(tb), Some(m)) = (by_image.get(d.image.as_str()), matched.get(d.image.as_str())) {
                for (t, b) in tb.iter().enumerate() {
                    if m[t] {
                        continue;
                    }
                    let v = iou(&db, b);
                    if v >= iou_threshold && best.is_none_or(|(_, bv)| v > bv) {
                        best = Some((t, v));
                    }
                }
            }
            if let Some((t, v)) = best {
                matched.get_mut(d.image.as_str()).expect("present")[t] = true;
                iou_sum += v;
                iou_n += 1;
            }
            flags.push(best.is_some());
        }
        let curve = pr_curve(&flags, n_truth);
        reports.push(ClassReport {
            class_id: c,
            name: name.clone(),
            num_truths: n_truth,
            num_detections: ranked.len(),
            true_positives: flags.iter().filter(|&&f| f).count(),
            ap: (n_truth > 0).then(|| ranked_ap(&flags, n_truth, mode)),
            curve,
        });
    }
    let aps: Vec<f64> = reports.iter().filter_map(|r| r.ap).collect();
    if aps.is_empty() {
        return Err(Error::Invalid("no ground truth for any class; mAP is undefined".into()));
    }
    Ok(EvalReport {
        map: aps.iter().sum::<f64>() / aps.len() as f64,
        average_iou: if iou_n == 0 { 0.0 } else { iou_sum / iou_n as f64 },
        classes: reports,
        iou_threshold,
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: f64) -> BBox<f64> {
        BBox::new(x, 0.0, 10.0, 10.0)
    }

    #[test]
    fn matching_examples() {
        let r = match_detections(&[(0.9, b(0.0))], &[b(0.0)], 0.5);
        assert_eq!((r.tp[0], r.iou[0]), (true, 1.0));
        let r = match_detections(&[(0.7, b(0.0)), (0.9, b(1.0))], &[b(0.0)], 0.5);
        assert_eq!(r.tp, vec![false, true]);
        // IoU 0.4 at threshold 0.5.
        let low = BBox::new(0.0, 0.0, 10.0, 4.0);
        assert!(!match_detections(&[(0.9, low)], &[b(0.0)], 0.5).tp[0]);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&pr_curve(&[true], 1), ApMode::AllPoint), 1.0);
        assert_eq!(average_precision(&pr_curve(&[false, true], 1), ApMode::AllPoint), 0.5);
        assert_eq!(average_precision(&pr_curve(&[], 3), ApMode::AllPoint), 0.0);
        let eleven = average_precision(&pr_curve(&[true, false, true], 2), ApMode::ElevenPoint);
        assert!((eleven - (6.0 + 5.0 * 2.0 / 3.0) / 11.0).abs() < 1e-12);
    }

    fn rec(image: &str, class_id: usize, score: f64, bbox: BBox<f64>) -> DetectionRecord {
        DetectionRecord {
            image: image.into(),
            class_id,
            class_name: String::new(),
            score,
            x: bbox.x,
            y: bbox.y,
            w: bbox.w,
            h: bbox.h,
        }
    }

    #[test]
    fn perfect_detector() {
        let names = vec!["a".to_string(), "b".to_string()];
        let truths = vec![
            GroundTruth { image: "1".into(), class_id: 0, bbox: b(0.0) },
            GroundTruth { image: "1".into(), class_id: 1, bbox: b(30.0) },
            GroundTruth { image: "2".into(), class_id: 0, bbox: b(5.0) },
        ];
        let dets: Vec<_> = truths.iter().map(|t| rec(&t.image, t.class_id, 0.9, t.bbox)).collect();
        let r = evaluate(&dets, &truths, &names, 0.5, ApMode::AllPoint).unwrap();
        assert_eq!((r.map, r.average_iou), (1.0, 1.0));
        assert!(evaluate(&dets, &[], &names, 0.5, ApMode::AllPoint).is_err());
    }
}
