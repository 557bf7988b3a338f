//! Turning raw head tensors into boxes, plus suppression and serialization.
//!
//! Head channels for anchor `a` start at `a·(C+5)`: tx, ty, tw, th, objectness,
//! then C class logits.

mod anchors;

pub use anchors::{kmeans_anchors, AnchorSet, ANCHORS_PER_HEAD};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::graph::{forward, ForwardOptions, NetGraph};
use crate::model::WeightStore;
use crate::scalar::{sigmoid, Scalar};
use crate::tensor::Tensor;

pub const DEFAULT_CONF: f64 = 0.25;
pub const DEFAULT_NMS_IOU: f64 = 0.45;
/// Size logits are clamped here before `exp`.
pub const MAX_SIZE_LOGIT: f64 = 10.0;

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox<f64>,
    pub class_id: usize,
    /// Objectness after the sigmoid.
    pub confidence: f64,
    pub class_prob: f64,
}

impl Detection {
    pub fn score(&self) -> f64 {
        self.confidence * self.class_prob
    }
}

/// Where a head sits on the input image.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct HeadGeometry {
    pub stride_x: f64,
    pub stride_y: f64,
}

impl HeadGeometry {
    pub fn new(input: (usize, usize), grid: (usize, usize)) -> Self {
        HeadGeometry { stride_x: input.1 as f64 / grid.1 as f64, stride_y: input.0 as f64 / grid.0 as f64 }
    }
}

/// Number of classes encoded in a head with `channels` channels.
pub fn classes_in_head(channels: usize) -> Result<usize> {
    if !channels.is_multiple_of(ANCHORS_PER_HEAD) || channels / ANCHORS_PER_HEAD < 6 {
        return Err(Error::shape("decode", format!("{channels} head channels is not 3·(C+5) for any C ≥ 1")));
    }
    Ok(channels / ANCHORS_PER_HEAD - 5)
}

/// Decoded box of one anchor in one cell, before any thresholding.
pub fn decode_box(t: [f64; 4], cell: (usize, usize), anchor: (f64, f64), geo: HeadGeometry) -> BBox<f64> {
    let cx = (cell.1 as f64 + sigmoid(t[0])) * geo.stride_x;
    let cy = (cell.0 as f64 + sigmoid(t[1])) * geo.stride_y;
    let w = anchor.0 * t[2].min(MAX_SIZE_LOGIT).exp();
    let h = anchor.1 * t[3].min(MAX_SIZE_LOGIT).exp();
    BBox::from_center(cx, cy, w, h)
}

/// Decodes one head. Returns one list per batch item. A cell/anchor yields a
/// detection for its best class when objectness × class probability reaches
/// `conf_threshold`.
pub fn decode_head<T: Scalar>(
    raw: &Tensor<T>,
    anchors: &[(f64, f64); ANCHORS_PER_HEAD],
    input: (usize, usize),
    conf_threshold: f64,
) -> Result<Vec<Vec<Detection>>> {
    let s = raw.shape();
    let classes = classes_in_head(s.c)?;
    if !(0.0..=1.0).contains(&conf_threshold) {
        return Err(Error::Invalid(format!("threshold {conf_threshold} outside [0, 1]")));
    }
    let geo = HeadGeometry::new(input, (s.h, s.w));
    let mut out = vec![Vec::new(); s.n];
    // Sigmoid outputs are strictly below 1 for finite logits.
    if conf_threshold >= 1.0 {
        return Ok(out);
    }
    let at = |n, c, y, x| raw.at(n, c, y, x).as_f64();
    for (n, dets) in out.iter_mut().enumerate() {
        for y in 0..s.h {
            for x in 0..s.w {
                for (a, &anchor) in anchors.iter().enumerate() {
                    let base = a * (classes + 5);
                    let conf = sigmoid(at(n, base + 4, y, x));
                    let (class_id, logit) = (0..classes)
                        .map(|c| (c, at(n, base + 5 + c, y, x)))
                        .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
                    let prob = sigmoid(logit);
                    if conf * prob < conf_threshold {
                        continue;
                    }
                    let t = [0, 1, 2, 3].map(|k| at(n, base + k, y, x));
                    dets.push(Detection {
                        bbox: decode_box(t, (y, x), anchor, geo),
                        class_id,
                        confidence: conf,
                        class_prob: prob,
                    });
                }
            }
        }
    }
    Ok(out)
}

fn order(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.score()
        .total_cmp(&a.score())
        .then(a.class_id.cmp(&b.class_id))
        .then(a.bbox.x.total_cmp(&b.bbox.x))
        .then(a.bbox.y.total_cmp(&b.bbox.y))
}

/// Greedy per-class suppression. Output is sorted by score (descending), then
/// class id, then x.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(order);
    let mut kept: Vec<Detection> = Vec::with_capacity(sorted.len());
    for d in sorted {
        let suppressed = kept.iter().any(|k| k.class_id == d.class_id && iou(&k.bbox, &d.bbox) >= iou_threshold);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

#[derive(Clone, Debug)]
pub struct DetectParams {
    pub anchors: AnchorSet,
    pub conf_threshold: f64,
    pub nms_iou: f64,
}

impl Default for DetectParams {
    fn default() -> Self {
        DetectParams { anchors: AnchorSet::default(), conf_threshold: DEFAULT_CONF, nms_iou: DEFAULT_NMS_IOU }
    }
}

/// Head strides of `graph` at a given input size, in head order.
pub fn head_strides(graph: &NetGraph, input: (usize, usize)) -> Result<Vec<f64>> {
    Ok(graph.head_shapes(input)?.into_iter().map(|(_, s)| input.1 as f64 / s.w as f64).collect())
}

/// Inference on a batch of images (NCHW, values in [0, 1]); one suppressed
/// detection list per image.
pub fn detect<T: Scalar>(
    graph: &NetGraph,
    weights: &WeightStore<T>,
    images: &Tensor<T>,
    params: &DetectParams,
) -> Result<Vec<Vec<Detection>>> {
    let s = images.shape();
    let input = (s.h, s.w);
    let strides = head_strides(graph, input)?;
    let anchors = params.anchors.for_heads(&strides, s.w as f64)?;
    let pass = forward(graph, weights, images, ForwardOptions::infer())?;
    let mut all = vec![Vec::new(); s.n];
    for (head, anchors) in pass.heads.values().zip(&anchors) {
        for (n, dets) in decode_head(head, anchors, input, params.conf_threshold)?.into_iter().enumerate() {
            all[n].extend(dets);
        }
    }
    Ok(all.into_iter().map(|d| nms(&d, params.nms_iou)).collect())
}

/// Number of images pushed through the network at once by [`detect_images`].
pub const DETECT_BATCH: usize = 8;

/// Runs [`detect`] on named images of any size: each is resized to
/// `input`×`input`, and boxes are mapped back to the image's own pixels.
pub fn detect_images<T: Scalar>(
    graph: &NetGraph,
    weights: &WeightStore<T>,
    images: &[(String, &Tensor<T>)],
    input: usize,
    params: &DetectParams,
    class_names: &[String],
) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for chunk in images.chunks(DETECT_BATCH) {
        let resized: Vec<Tensor<T>> =
            chunk.iter().map(|(_, img)| crate::augment::resize_bilinear(img, input, input)).collect();
        let dets = detect(graph, weights, &Tensor::stack(&resized)?, params)?;
        for ((name, img), found) in chunk.iter().zip(dets) {
            let s = img.shape();
            let (sx, sy) = (s.w as f64 / input as f64, s.h as f64 / input as f64);
            for mut d in found {
                d.bbox = d.bbox.scale(sx, sy);
                out.push(DetectionRecord::new(name, &d, class_names));
            }
        }
    }
    Ok(out)
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image: String,
    pub class_id: usize,
    pub class_name: String,
    pub score: f64,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl DetectionRecord {
    pub fn new(image: &str, d: &Detection, class_names: &[String]) -> Self {
        DetectionRecord {
            image: image.to_string(),
            class_id: d.class_id,
            class_name: class_names.get(d.class_id).cloned().unwrap_or_else(|| d.class_id.to_string()),
            score: d.score(),
            x: d.bbox.x,
            y: d.bbox.y,
            w: d.bbox.w,
            h: d.bbox.h,
        }
    }

    pub fn bbox(&self) -> BBox<f64> {
        BBox::new(self.x, self.y, self.w, self.h)
    }
}

/// One JSON object per line.
pub fn write_jsonl<W: Write>(mut out: W, records: &[DetectionRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("<detections>", e))?;
    }
    Ok(())
}

pub fn read_jsonl(text: &str) -> Result<Vec<DetectionRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() }))
        .collect()
}
