use std::f64::consts::PI;

use crate::geometry::{iou, BBox};

/// Aspect-ratio consistency term, in [0, 1].
pub fn aspect_term_v(a: &BBox<f64>, b: &BBox<f64>) -> f64 {
    let d = (a.w / a.h).atan() - (b.w / b.h).atan();
    4.0 / (PI * PI) * d * d
}

/// Trade-off weight of the aspect term; 0 when `v` is 0.
pub fn ciou_alpha(iou: f64, v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v / (1.0 - iou + v)
    }
}

/// Squared diagonal of the smallest box enclosing both.
fn enclosing_diag2(a: &BBox<f64>, b: &BBox<f64>) -> f64 {
    let ex = a.right().max(b.right()) - a.x.min(b.x);
    let ey = a.bottom().max(b.bottom()) - a.y.min(b.y);
    ex * ex + ey * ey
}

fn center_dist2(a: &BBox<f64>, b: &BBox<f64>) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).powi(2) + (ay - by).powi(2)
}

/// CIoU loss with a caller-supplied `alpha`.
pub fn ciou_loss_with_alpha(pred: &BBox<f64>, truth: &BBox<f64>, alpha: f64) -> f64 {
    let c2 = enclosing_diag2(pred, truth);
    let dist = if c2 > 0.0 { center_dist2(pred, truth) / c2 } else { 0.0 };
    1.0 - iou(pred, truth) + dist + alpha * aspect_term_v(pred, truth)
}

pub fn ciou_loss(pred: &BBox<f64>, truth: &BBox<f64>) -> f64 {
    if pred == truth {
        return 0.0;
    }
    let alpha = ciou_alpha(iou(pred, truth), aspect_term_v(pred, truth));
    ciou_loss_with_alpha(pred, truth, alpha)
}

/// Loss and its gradient with respect to `pred`'s (x, y, w, h), holding
/// `alpha` constant at its current value.
pub fn ciou_loss_grad(pred: &BBox<f64>, truth: &BBox<f64>) -> (f64, [f64; 4]) {
    let (p, t) = (pred, truth);
    // Intersection extents and their partials w.r.t. (x, y, w, h).
    let axis = |lo: f64, len: f64, tlo: f64, tlen: f64, lo_idx: usize, len_idx: usize| {
        let (hi, thi) = (lo + len, tlo + tlen);
        let ext = hi.min(thi) - lo.max(tlo);
        let mut d = [0.0; 4];
        if ext > 0.0 {
            if hi < thi {
                d[lo_idx] += 1.0;
                d[len_idx] += 1.0;
            }
            if lo > tlo {
                d[lo_idx] -= 1.0;
            }
            (ext, d)
        } else {
            (0.0, d)
        }
    };
    let (iw, d_iw) = axis(p.x, p.w, t.x, t.w, 0, 2);
    let (ih, d_ih) = axis(p.y, p.h, t.y, t.h, 1, 3);
    let g = iw * ih;
    let d_g: [f64; 4] = std::array::from_fn(|k| d_iw[k] * ih + iw * d_ih[k]);
    let u = p.w * p.h + t.w * t.h - g;
    let d_area = [0.0, 0.0, p.h, p.w];
    let d_u: [f64; 4] = std::array::from_fn(|k| d_area[k] - d_g[k]);
    let iou = g / u;
    let d_iou: [f64; 4] = std::array::from_fn(|k| (d_g[k] * u - g * d_u[k]) / (u * u));

    let (pcx, pcy) = p.center();
    let (tcx, tcy) = t.center();
    let d2 = (pcx - tcx).powi(2) + (pcy - tcy).powi(2);
    // cx = x + w/2
    let d_d2 = [2.0 * (pcx - tcx), 2.0 * (pcy - tcy), (pcx - tcx), (pcy - tcy)];
    let (r, tr) = (p.right(), t.right());
    let (b, tb) = (p.bottom(), t.bottom());
    let ex = r.max(tr) - p.x.min(t.x);
    let ey = b.max(tb) - p.y.min(t.y);
    let mut d_ex = [0.0; 4];
    if r >= tr {
        d_ex[0] += 1.0;
        d_ex[2] += 1.0;
    }
    if p.x <= t.x {
        d_ex[0] -= 1.0;
    }
    let mut d_ey = [0.0; 4];
    if b >= tb {
        d_ey[1] += 1.0;
        d_ey[3] += 1.0;
    }
    if p.y <= t.y {
        d_ey[1] -= 1.0;
    }
    let c2 = ex * ex + ey * ey;
    let d_c2: [f64; 4] = std::array::from_fn(|k| 2.0 * ex * d_ex[k] + 2.0 * ey * d_ey[k]);

    let v = aspect_term_v(p, t);
    let alpha = ciou_alpha(iou, v);
    let diff = (p.w / p.h).atan() - (t.w / t.h).atan();
    let norm = p.w * p.w + p.h * p.h;
    let k = 8.0 / (PI * PI) * diff;
    let d_v = [0.0, 0.0, k * p.h / norm, -k * p.w / norm];

    let loss = 1.0 - iou + d2 / c2 + alpha * v;
    let grad = std::array::from_fn(|j| -d_iou[j] + (d_d2[j] * c2 - d2 * d_c2[j]) / (c2 * c2) + alpha * d_v[j]);
    (loss, grad)
}
