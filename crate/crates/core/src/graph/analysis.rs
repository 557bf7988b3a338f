use std::fmt;

use indexmap::IndexMap;
use serde::Serialize;

use super::{LayerKind, NetGraph, Source};
use crate::error::{Error, Result};

/// (channels, height, width) of one activation.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
pub struct Shape3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl fmt::Display for Shape3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct LayerFlops {
    pub id: String,
    pub kind: &'static str,
    pub output: Shape3,
    pub flops: u64,
    pub params: u64,
}

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct FlopReport {
    pub input: (usize, usize),
    pub layers: Vec<LayerFlops>,
    pub total_flops: u64,
    /// `total_flops / 1e9`.
    pub bflops: f64,
    pub params: u64,
}

impl FlopReport {
    /// Plain-text per-layer table followed by totals.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<16} {:<10} {:>14} {:>16} {:>10}\n", "layer", "kind", "output", "flops", "params");
        for l in &self.layers {
            out.push_str(&format!(
                "{:<16} {:<10} {:>14} {:>16} {:>10}\n",
                l.id,
                l.kind,
                l.output.to_string(),
                l.flops,
                l.params
            ));
        }
        out.push_str(&format!(
            "input {}x{}: total {} flops = {:.4} BFLOPS, {} parameters\n",
            self.input.0, self.input.1, self.total_flops, self.bflops, self.params
        ));
        out
    }
}

/// Floating-point operations of one layer, given its input and output shapes.
///
/// Standard convolution: 2*W*H*N*M*K^2; depthwise: 2*W*H*N*K^2; pointwise:
/// 2*W*H*N*M, with W, H the output spatial size. Bias, batch norm,
/// activations, pooling, resampling and concatenation count as zero.
pub fn layer_flops(kind: &LayerKind, input: Shape3, output: Shape3) -> u64 {
    let wh = (output.w * output.h) as u64;
    let n = input.c as u64;
    match *kind {
        LayerKind::Conv { m, k, .. } => 2 * wh * n * m as u64 * (k * k) as u64,
        LayerKind::Depthwise { k, .. } => 2 * wh * n * (k * k) as u64,
        LayerKind::Pointwise { m, .. } => 2 * wh * n * m as u64,
        _ => 0,
    }
}

/// Weight, bias and batch-norm (gamma, beta, mean, var) parameter count.
pub fn layer_params(kind: &LayerKind, in_c: usize, out_c: usize) -> u64 {
    let kernel = kind.kernel_shape(in_c).map_or(0, |s| s.len());
    let bias = if kind.has_bias() { out_c } else { 0 };
    let bn = if kind.has_bn() { 4 * out_c } else { 0 };
    (kernel + bias + bn) as u64
}

impl NetGraph {
    /// Per-layer output channel counts (independent of spatial size).
    pub fn channels(&self) -> Result<Vec<usize>> {
        let mut out: Vec<usize> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let ins: Vec<usize> = self.sources[i]
                .iter()
                .map(|s| match *s {
                    Source::Input => self.input_channels,
                    Source::Layer(j) => out[j],
                })
                .collect();
            let c = match layer.kind {
                LayerKind::Conv { m, .. } | LayerKind::Pointwise { m, .. } => m,
                LayerKind::Concat => ins.iter().sum(),
                LayerKind::YoloHead { classes } => {
                    let expect = 3 * (classes + 5);
                    if ins[0] != expect {
                        return Err(Error::Graph(format!(
                            "yolo-head `{}` expects {expect} input channels, got {}",
                            layer.id, ins[0]
                        )));
                    }
                    expect
                }
                _ => ins[0],
            };
            out.push(c);
        }
        Ok(out)
    }

    /// Shape walk for an arbitrary `(height, width)` input.
    pub fn walk_shapes(&self, input: (usize, usize)) -> Result<Vec<Shape3>> {
        let channels = self.channels()?;
        let in_shape = Shape3 { c: self.input_channels, h: input.0, w: input.1 };
        let mut out: Vec<Shape3> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let ins: Vec<Shape3> = self.sources[i]
                .iter()
                .map(|s| match *s {
                    Source::Input => in_shape,
                    Source::Layer(j) => out[j],
                })
                .collect();
            let x = ins[0];
            let conv = |k: usize, stride: usize| -> Result<(usize, usize)> {
                let pad = k / 2;
                if x.h + 2 * pad < k || x.w + 2 * pad < k {
                    return Err(Error::Graph(format!("layer `{}`: kernel {k} does not fit {x}", layer.id)));
                }
                Ok(((x.h + 2 * pad - k) / stride + 1, (x.w + 2 * pad - k) / stride + 1))
            };
            let (h, w) = match layer.kind {
                LayerKind::Conv { k, stride, .. } | LayerKind::Depthwise { k, stride, .. } => conv(k, stride)?,
                LayerKind::MaxPool2 => {
                    if !x.h.is_multiple_of(2) || !x.w.is_multiple_of(2) {
                        return Err(Error::Graph(format!(
                            "layer `{}`: maxpool2 on odd size {}x{}",
                            layer.id, x.h, x.w
                        )));
                    }
                    (x.h / 2, x.w / 2)
                }
                LayerKind::Upsample2 => (x.h * 2, x.w * 2),
                LayerKind::Concat => {
                    if let Some(bad) = ins.iter().find(|s| (s.h, s.w) != (x.h, x.w)) {
                        return Err(Error::Graph(format!("layer `{}`: concat of {x} and {bad}", layer.id)));
                    }
                    (x.h, x.w)
                }
                _ => (x.h, x.w),
            };
            out.push(Shape3 { c: channels[i], h, w });
        }
        Ok(out)
    }

    /// Per-layer `(C, H, W)` for a network input of `(height, width)`; both
    /// must be positive multiples of 32.
    pub fn infer_shapes(&self, input: (usize, usize)) -> Result<IndexMap<String, Shape3>> {
        if input.0 == 0 || input.1 == 0 || !input.0.is_multiple_of(32) || !input.1.is_multiple_of(32) {
            return Err(Error::Invalid(format!("input {}x{} is not a positive multiple of 32", input.0, input.1)));
        }
        let shapes = self.walk_shapes(input)?;
        Ok(self.layers.iter().zip(shapes).map(|(l, s)| (l.id.clone(), s)).collect())
    }

    /// Shapes of the declared output heads, in declaration order.
    pub fn head_shapes(&self, input: (usize, usize)) -> Result<Vec<(String, Shape3)>> {
        let shapes = self.infer_shapes(input)?;
        Ok(self.outputs().map(|(name, id)| (name.to_string(), shapes[id])).collect())
    }

    pub fn count_flops(&self, input: (usize, usize)) -> Result<FlopReport> {
        let shapes = self.walk_shapes(input)?;
        let in_shape = Shape3 { c: self.input_channels, h: input.0, w: input.1 };
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let src = match self.sources[i][0] {
                Source::Input => in_shape,
                Source::Layer(j) => shapes[j],
            };
            layers.push(LayerFlops {
                id: layer.id.clone(),
                kind: layer.kind.name(),
                output: shapes[i],
                flops: layer_flops(&layer.kind, src, shapes[i]),
                params: layer_params(&layer.kind, src.c, shapes[i].c),
            });
        }
        let total_flops = layers.iter().map(|l| l.flops).sum();
        let params = layers.iter().map(|l| l.params).sum();
        Ok(FlopReport { input, layers, total_flops, bflops: total_flops as f64 / 1e9, params })
    }

    pub fn count_params(&self) -> Result<u64> {
        let channels = self.channels()?;
        Ok(self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let in_c = match self.sources[i][0] {
                    Source::Input => self.input_channels,
                    Source::Layer(j) => channels[j],
                };
                layer_params(&l.kind, in_c, channels[i])
            })
            .sum())
    }
}
