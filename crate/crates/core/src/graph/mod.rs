//! Declarative network description: layers wired by id, validated as a DAG in
//! declaration order, plus the analyses (shapes, FLOPs, parameters) and the
//! executor that runs it.

mod analysis;
mod exec;
mod parse;

pub use analysis::{FlopReport, LayerFlops, Shape3};
pub use exec::{backward, backward_params, forward, ForwardOptions, ForwardPass, Gradients};
pub use parse::parse_graph;

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{Activation, Shape};

/// Reserved id of the network input.
pub const INPUT_ID: &str = "input";

#[derive(Clone, Copy, PartialEq, Debug)]
pub enum LayerKind {
    Conv { m: usize, k: usize, stride: usize, bn: bool, act: Activation, bias: bool },
    Depthwise { k: usize, stride: usize, bn: bool, act: Activation, bias: bool },
    Pointwise { m: usize, bn: bool, act: Activation, bias: bool },
    BatchNorm,
    Activation(Activation),
    MaxPool2,
    Upsample2,
    Concat,
    YoloHead { classes: usize },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "conv",
            LayerKind::Depthwise { .. } => "depthwise",
            LayerKind::Pointwise { .. } => "pointwise",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Activation(_) => "activation",
            LayerKind::MaxPool2 => "maxpool2",
            LayerKind::Upsample2 => "upsample2",
            LayerKind::Concat => "concat",
            LayerKind::YoloHead { .. } => "yolo-head",
        }
    }

    /// The activation applied at the end of the layer, if any.
    pub fn activation(&self) -> Option<Activation> {
        match *self {
            LayerKind::Conv { act, .. }
            | LayerKind::Depthwise { act, .. }
            | LayerKind::Pointwise { act, .. }
            | LayerKind::Activation(act) => Some(act),
            _ => None,
        }
    }

    fn with_activation(self, new: Activation) -> Self {
        match self {
            LayerKind::Conv { m, k, stride, bn, act, bias } if !act.is_linear() => {
                LayerKind::Conv { m, k, stride, bn, act: new, bias }
            }
            LayerKind::Depthwise { k, stride, bn, act, bias } if !act.is_linear() => {
                LayerKind::Depthwise { k, stride, bn, act: new, bias }
            }
            LayerKind::Pointwise { m, bn, act, bias } if !act.is_linear() => {
                LayerKind::Pointwise { m, bn, act: new, bias }
            }
            LayerKind::Activation(act) if !act.is_linear() => LayerKind::Activation(new),
            other => other,
        }
    }

    /// Whether the layer owns a batch-norm parameter block.
    pub fn has_bn(&self) -> bool {
        match *self {
            LayerKind::Conv { bn, .. } | LayerKind::Depthwise { bn, .. } | LayerKind::Pointwise { bn, .. } => bn,
            LayerKind::BatchNorm => true,
            _ => false,
        }
    }

    pub fn has_bias(&self) -> bool {
        match *self {
            LayerKind::Conv { bias, .. } | LayerKind::Depthwise { bias, .. } | LayerKind::Pointwise { bias, .. } => {
                bias
            }
            _ => false,
        }
    }

    pub fn is_parameterized(&self) -> bool {
        self.kernel_shape(1).is_some() || self.has_bn()
    }

    /// Kernel tensor shape for a given input channel count.
    pub fn kernel_shape(&self, in_c: usize) -> Option<Shape> {
        match *self {
            LayerKind::Conv { m, k, .. } => Some(Shape::new(m, in_c, k, k)),
            LayerKind::Depthwise { k, .. } => Some(Shape::new(in_c, 1, k, k)),
            LayerKind::Pointwise { m, .. } => Some(Shape::new(m, in_c, 1, 1)),
            _ => None,
        }
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct LayerSpec {
    pub id: String,
    pub kind: LayerKind,
    /// Source ids; `input` names the network input.
    pub inputs: Vec<String>,
}

impl LayerSpec {
    pub fn new(id: impl Into<String>, kind: LayerKind, inputs: &[&str]) -> Self {
        LayerSpec { id: id.into(), kind, inputs: inputs.iter().map(|s| s.to_string()).collect() }
    }
}

/// Where a layer reads from.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Source {
    Input,
    Layer(usize),
}

#[derive(Clone, PartialEq, Debug)]
pub struct NetGraph {
    input_channels: usize,
    layers: Vec<LayerSpec>,
    sources: Vec<Vec<Source>>,
    /// (head name, layer index), in declaration order.
    outputs: Vec<(String, usize)>,
}

impl NetGraph {
    /// Validates wiring: unique ids, backward-only references, arity, outputs.
    pub fn new(input_channels: usize, layers: Vec<LayerSpec>, outputs: Vec<(String, String)>) -> Result<Self> {
        if input_channels == 0 {
            return Err(Error::Graph("input channels must be positive".into()));
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut sources = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            if layer.id == INPUT_ID {
                return Err(Error::Graph(format!("`{INPUT_ID}` is a reserved id")));
            }
            let mut srcs = Vec::with_capacity(layer.inputs.len());
            for name in &layer.inputs {
                if name == INPUT_ID {
                    srcs.push(Source::Input);
                } else if let Some(&j) = index.get(name.as_str()) {
                    srcs.push(Source::Layer(j));
                } else {
                    return Err(Error::Graph(format!("layer `{}` references undeclared id `{name}`", layer.id)));
                }
            }
            let arity_ok = match layer.kind {
                LayerKind::Concat => srcs.len() >= 2,
                _ => srcs.len() == 1,
            };
            if !arity_ok {
                return Err(Error::Graph(format!(
                    "layer `{}` ({}) has {} inputs",
                    layer.id,
                    layer.kind.name(),
                    srcs.len()
                )));
            }
            validate_params(layer)?;
            if index.insert(&layer.id, i).is_some() {
                return Err(Error::Graph(format!("duplicate layer id `{}`", layer.id)));
            }
            sources.push(srcs);
        }
        let mut outs = Vec::with_capacity(outputs.len());
        for (name, id) in outputs {
            let &j = index
                .get(id.as_str())
                .ok_or_else(|| Error::Graph(format!("output `{name}` references unknown layer `{id}`")))?;
            if outs.iter().any(|(n, _)| *n == name) {
                return Err(Error::Graph(format!("duplicate output `{name}`")));
            }
            outs.push((name, j));
        }
        if outs.is_empty() {
            return Err(Error::Graph("graph declares no outputs".into()));
        }
        Ok(NetGraph { input_channels, layers, sources, outputs: outs })
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn sources(&self, layer: usize) -> &[Source] {
        &self.sources[layer]
    }

    pub fn layer_index(&self, id: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.id == id)
    }

    /// (head name, layer id) pairs.
    pub fn outputs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.outputs.iter().map(|(n, i)| (n.as_str(), self.layers[*i].id.as_str()))
    }

    pub(crate) fn output_indices(&self) -> &[(String, usize)] {
        &self.outputs
    }

    /// Class count of the `yolo-head` layers, if all heads agree.
    pub fn num_classes(&self) -> Option<usize> {
        let mut found = None;
        for l in &self.layers {
            if let LayerKind::YoloHead { classes } = l.kind {
                match found {
                    None => found = Some(classes),
                    Some(c) if c != classes => return None,
                    _ => {}
                }
            }
        }
        found
    }

    /// Copy of the graph with every non-linear activation replaced by `act`.
    /// Linear (compressing) layers are left alone.
    pub fn with_activation(&self, act: Activation) -> NetGraph {
        let mut g = self.clone();
        for l in &mut g.layers {
            l.kind = l.kind.with_activation(act);
        }
        g
    }

    /// Serializes to the line-based description format.
    pub fn to_text(&self) -> String {
        let mut out = format!("input channels={}\n", self.input_channels);
        for l in &self.layers {
            out.push_str(&format!("layer {} {}", l.id, l.kind.name()));
            match l.kind {
                LayerKind::Conv { m, k, stride, bn, act, bias } => out.push_str(&format!(
                    " m={m} k={k} stride={stride} bn={} act={act} bias={}",
                    u8::from(bn),
                    u8::from(bias)
                )),
                LayerKind::Depthwise { k, stride, bn, act, bias } => out.push_str(&format!(
                    " k={k} stride={stride} bn={} act={act} bias={}",
                    u8::from(bn),
                    u8::from(bias)
                )),
                LayerKind::Pointwise { m, bn, act, bias } => {
                    out.push_str(&format!(" m={m} bn={} act={act} bias={}", u8::from(bn), u8::from(bias)))
                }
                LayerKind::Activation(act) => out.push_str(&format!(" act={act}")),
                LayerKind::YoloHead { classes } => out.push_str(&format!(" classes={classes}")),
                LayerKind::BatchNorm | LayerKind::MaxPool2 | LayerKind::Upsample2 | LayerKind::Concat => {}
            }
            out.push_str(&format!(" inputs={}\n", l.inputs.join(",")));
        }
        for (name, id) in self.outputs() {
            out.push_str(&format!("output {name} {id}\n"));
        }
        out
    }
}

impl fmt::Display for NetGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

fn validate_params(layer: &LayerSpec) -> Result<()> {
    let bad = |what: &str| Err(Error::Graph(format!("layer `{}`: {what}", layer.id)));
    match layer.kind {
        LayerKind::Conv { m, k, stride, .. } => {
            if m == 0 || stride == 0 || k % 2 == 0 {
                return bad("conv needs m > 0, stride > 0 and odd k");
            }
        }
        LayerKind::Depthwise { k, stride, .. } => {
            if stride == 0 || k % 2 == 0 {
                return bad("depthwise needs stride > 0 and odd k");
            }
        }
        LayerKind::Pointwise { m, .. } => {
            if m == 0 {
                return bad("pointwise needs m > 0");
            }
        }
        LayerKind::YoloHead { classes: 0 } => {
            return bad("yolo-head needs classes > 0");
        }
        _ => {}
    }
    Ok(())
}
