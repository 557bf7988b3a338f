use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

pub const ANCHORS_PER_HEAD: usize = 3;

/// Anchor priors in pixels at `reference_size`, sorted by area. The finest
/// head gets the first three, the next finest the following three, and so on.
#[derive(Clone, PartialEq, Debug)]
pub struct AnchorSet {
    pub reference_size: f64,
    anchors: Vec<(f64, f64)>,
}

impl Default for AnchorSet {
    fn default() -> Self {
        AnchorSet::new(
            512.0,
            vec![(16.0, 16.0), (24.0, 24.0), (36.0, 36.0), (56.0, 56.0), (84.0, 84.0), (128.0, 128.0)],
        )
        .expect("valid defaults")
    }
}

impl AnchorSet {
    pub fn new(reference_size: f64, mut anchors: Vec<(f64, f64)>) -> Result<Self> {
        if anchors.is_empty() || !anchors.len().is_multiple_of(ANCHORS_PER_HEAD) {
            return Err(Error::Invalid(format!(
                "need a positive multiple of {ANCHORS_PER_HEAD} anchors, got {}",
                anchors.len()
            )));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(reference_size) || anchors.iter().any(|&(w, h)| !positive(w) || !positive(h)) {
            return Err(Error::Invalid("anchor sizes must be positive and finite".into()));
        }
        anchors.sort_by(|a, b| (a.0 * a.1).total_cmp(&(b.0 * b.1)).then(a.0.total_cmp(&b.0)));
        Ok(AnchorSet { reference_size, anchors })
    }

    pub fn num_heads(&self) -> usize {
        self.anchors.len() / ANCHORS_PER_HEAD
    }

    pub fn all(&self) -> &[(f64, f64)] {
        &self.anchors
    }

    /// Anchors of the head with the given fineness rank (0 = smallest stride),
    /// scaled to `input_size`.
    pub fn for_rank(&self, rank: usize, input_size: f64) -> [(f64, f64); ANCHORS_PER_HEAD] {
        let s = input_size / self.reference_size;
        let base = rank * ANCHORS_PER_HEAD;
        std::array::from_fn(|a| {
            let (w, h) = self.anchors[base + a];
            (w * s, h * s)
        })
    }

    /// Fineness rank of each head given the head strides (in head order).
    /// Equal strides keep head order.
    pub fn ranks(strides: &[f64]) -> Vec<usize> {
        let mut order: Vec<usize> = (0..strides.len()).collect();
        order.sort_by(|&a, &b| strides[a].total_cmp(&strides[b]).then(a.cmp(&b)));
        let mut ranks = vec![0; strides.len()];
        for (r, &i) in order.iter().enumerate() {
            ranks[i] = r;
        }
        ranks
    }

    /// Anchor sets for every head, in head order.
    pub fn for_heads(&self, strides: &[f64], input_size: f64) -> Result<Vec<[(f64, f64); ANCHORS_PER_HEAD]>> {
        if strides.len() != self.num_heads() {
            return Err(Error::Invalid(format!("{} heads but anchors for {}", strides.len(), self.num_heads())));
        }
        Ok(Self::ranks(strides).into_iter().map(|r| self.for_rank(r, input_size)).collect())
    }
}

/// `w,h w,h ...` or `w,h;w,h`, optionally prefixed with `@size ` to set the
/// reference input size (512 by default).
impl FromStr for AnchorSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut reference = 512.0;
        let mut pairs = Vec::new();
        for tok in s.split(|c: char| c.is_whitespace() || c == ';').filter(|t| !t.is_empty()) {
            if let Some(r) = tok.strip_prefix('@') {
                reference = r.parse().map_err(|_| Error::Invalid(format!("bad reference size `{r}`")))?;
                continue;
            }
            let (w, h) = tok.split_once(',').ok_or_else(|| Error::Invalid(format!("anchor `{tok}` is not `w,h`")))?;
            let parse =
                |v: &str| v.trim().parse::<f64>().map_err(|_| Error::Invalid(format!("anchor `{tok}` is not numeric")));
            pairs.push((parse(w)?, parse(h)?));
        }
        AnchorSet::new(reference, pairs)
    }
}

impl fmt::Display for AnchorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{}", self.reference_size)?;
        for (w, h) in &self.anchors {
            write!(f, " {w},{h}")?;
        }
        Ok(())
    }
}

fn shape_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    iou(&BBox::new(0.0, 0.0, a.0, a.1), &BBox::new(0.0, 0.0, b.0, b.1))
}

/// k-means over box sizes with 1 − IoU as the distance. Initial centres are
/// area quantiles, so the result is deterministic. Returned sorted by area.
pub fn kmeans_anchors(sizes: &[(f64, f64)], k: usize, max_iter: usize) -> Result<Vec<(f64, f64)>> {
    if k == 0 || sizes.len() < k {
        return Err(Error::Invalid(format!("k-means needs at least k={k} boxes, got {}", sizes.len())));
    }
    let mut sorted = sizes.to_vec();
    sorted.sort_by(|a, b| (a.0 * a.1).total_cmp(&(b.0 * b.1)));
    let mut centres: Vec<(f64, f64)> = (0..k).map(|i| sorted[(2 * i + 1) * sorted.len() / (2 * k)]).collect();
    let mut assign = vec![usize::MAX; sizes.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, &s) in sizes.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| (1.0 - shape_iou(s, centres[a])).total_cmp(&(1.0 - shape_iou(s, centres[b]))))
                .expect("k > 0");
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, centre) in centres.iter_mut().enumerate() {
            let members: Vec<(f64, f64)> =
                sizes.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(s, _)| *s).collect();
            if !members.is_empty() {
                let n = members.len() as f64;
                *centre = (members.iter().map(|m| m.0).sum::<f64>() / n, members.iter().map(|m| m.1).sum::<f64>() / n);
            }
        }
    }
    centres.sort_by(|a, b| (a.0 * a.1).total_cmp(&(b.0 * b.1)));
    Ok(centres)
}
