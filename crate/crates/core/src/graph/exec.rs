use indexmap::IndexMap;

use super::{LayerKind, NetGraph, Source};
use crate::error::{Error, Result};
use crate::model::WeightStore;
use crate::scalar::Scalar;
use crate::tensor::conv::conv2d_grads;
use crate::tensor::{
    activate, activate_backward, batch_norm, batch_norm_backward, concat_channels, concat_channels_backward, conv2d,
    depthwise_conv2d, depthwise_conv2d_backward, max_pool2, max_pool2_backward, upsample2, upsample2_backward, BnCache,
    BnMode, Tensor,
};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ForwardOptions {
    pub bn_mode: BnMode,
    /// Keep every intermediate needed by [`backward`].
    pub record: bool,
}

impl ForwardOptions {
    pub const fn infer() -> Self {
        ForwardOptions { bn_mode: BnMode::Infer, record: false }
    }

    pub const fn train() -> Self {
        ForwardOptions { bn_mode: BnMode::Train, record: true }
    }
}

#[derive(Clone, Debug)]
struct Tape<T: Scalar> {
    input: Tensor<T>,
    values: Vec<Tensor<T>>,
    /// Pre-activation tensor of layers with a non-linear activation.
    pre_act: Vec<Option<Tensor<T>>>,
    /// Index into `bn_caches` for layers with batch norm.
    bn_slot: Vec<Option<usize>>,
}

/// Result of running a graph: the named head tensors plus, when recorded,
/// the saved context for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass<T: Scalar> {
    pub heads: IndexMap<String, Tensor<T>>,
    bn_caches: Vec<(String, BnCache<T>)>,
    tape: Option<Tape<T>>,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn is_recorded(&self) -> bool {
        self.tape.is_some()
    }

    pub fn bn_caches(&self) -> impl Iterator<Item = (&str, &BnCache<T>)> {
        self.bn_caches.iter().map(|(id, c)| (id.as_str(), c))
    }

    /// Head tensors in declaration order.
    pub fn head_list(&self) -> Vec<&Tensor<T>> {
        self.heads.values().collect()
    }
}

#[derive(Clone, Debug)]
pub struct Gradients<T: Scalar> {
    /// Same structure as the weights; running statistics are left at zero.
    pub params: WeightStore<T>,
    /// Present only when requested; see [`backward_params`].
    pub input: Option<Tensor<T>>,
}

fn add_channel_bias<T: Scalar>(t: &mut Tensor<T>, bias: &[T]) {
    let s = t.shape();
    let plane = s.plane();
    for n in 0..s.n {
        for (c, &b) in bias.iter().enumerate() {
            let start = (n * s.c + c) * plane;
            for v in &mut t.data_mut()[start..start + plane] {
                *v += b;
            }
        }
    }
}

/// Runs `graph` on `input` (NCHW).
pub fn forward<T: Scalar>(
    graph: &NetGraph,
    weights: &WeightStore<T>,
    input: &Tensor<T>,
    opts: ForwardOptions,
) -> Result<ForwardPass<T>> {
    if input.shape().c != graph.input_channels() {
        return Err(Error::shape(
            "forward",
            format!("input {} but graph expects {} channels", input.shape(), graph.input_channels()),
        ));
    }
    let layers = graph.layers();
    let mut last_use: Vec<usize> = (0..layers.len()).collect();
    for i in 0..layers.len() {
        for s in graph.sources(i) {
            if let Source::Layer(j) = *s {
                last_use[j] = last_use[j].max(i);
            }
        }
    }
    for (_, j) in graph.output_indices() {
        last_use[*j] = usize::MAX;
    }

    let mut values: Vec<Option<Tensor<T>>> = vec![None; layers.len()];
    let mut pre_act = Vec::with_capacity(layers.len());
    let mut bn_slot = Vec::with_capacity(layers.len());
    let mut bn_caches = Vec::new();

    for (i, layer) in layers.iter().enumerate() {
        let srcs: Vec<&Tensor<T>> = graph
            .sources(i)
            .iter()
            .map(|s| match *s {
                Source::Input => input,
                Source::Layer(j) => values[j].as_ref().expect("source kept alive until last use"),
            })
            .collect();
        let x = srcs[0];
        let params = || weights.get(&layer.id).ok_or_else(|| Error::MissingWeights(layer.id.clone()));
        let kernel = || params()?.weight.as_ref().ok_or_else(|| Error::MissingWeights(layer.id.clone()));
        let bias = || -> Result<Option<&[T]>> {
            if !layer.kind.has_bias() {
                return Ok(None);
            }
            params()?.bias.as_deref().map(Some).ok_or_else(|| Error::MissingWeights(layer.id.clone()))
        };

        let mut y = match layer.kind {
            LayerKind::Conv { k, stride, .. } => conv2d(x, kernel()?, bias()?, stride, k / 2)?,
            LayerKind::Pointwise { .. } => conv2d(x, kernel()?, bias()?, 1, 0)?,
            LayerKind::Depthwise { k, stride, .. } => {
                let mut y = depthwise_conv2d(x, kernel()?, stride, k / 2)?;
                if let Some(b) = bias()? {
                    add_channel_bias(&mut y, b);
                }
                y
            }
            LayerKind::BatchNorm | LayerKind::Activation(_) | LayerKind::YoloHead { .. } => x.clone(),
            LayerKind::MaxPool2 => max_pool2(x)?,
            LayerKind::Upsample2 => upsample2(x),
            LayerKind::Concat => concat_channels(&srcs)?,
        };

        let mut slot = None;
        if layer.kind.has_bn() {
            let bn = params()?.bn.as_ref().ok_or_else(|| Error::MissingWeights(layer.id.clone()))?;
            let (out, cache) = batch_norm(&y, bn, opts.bn_mode)?;
            y = out;
            if opts.record || opts.bn_mode == BnMode::Train {
                slot = Some(bn_caches.len());
                bn_caches.push((layer.id.clone(), cache));
            }
        }
        bn_slot.push(slot);

        let out = match layer.kind.activation() {
            Some(act) if !act.is_linear() => {
                let out = activate(&y, act);
                pre_act.push(opts.record.then_some(y));
                out
            }
            _ => {
                pre_act.push(None);
                y
            }
        };
        if !out.is_finite() {
            return Err(Error::Invalid(format!("non-finite values after layer `{}`", layer.id)));
        }
        values[i] = Some(out);

        if !opts.record {
            for s in graph.sources(i) {
                if let Source::Layer(j) = *s {
                    if last_use[j] == i {
                        values[j] = None;
                    }
                }
            }
        }
    }

    let heads = graph
        .output_indices()
        .iter()
        .map(|(name, j)| (name.clone(), values[*j].clone().expect("outputs are kept")))
        .collect();
    let tape = opts.record.then(|| Tape {
        input: input.clone(),
        values: values.into_iter().map(|v| v.expect("recorded")).collect(),
        pre_act,
        bn_slot,
    });
    Ok(ForwardPass { heads, bn_caches, tape })
}

/// Back-propagates head gradients through a recorded forward pass.
///
/// Heads missing from `head_grads` contribute zero gradient.
pub fn backward<T: Scalar>(
    graph: &NetGraph,
    weights: &WeightStore<T>,
    pass: &ForwardPass<T>,
    head_grads: &IndexMap<String, Tensor<T>>,
) -> Result<Gradients<T>> {
    backward_impl(graph, weights, pass, head_grads, true)
}

/// Like [`backward`] but skips the gradient with respect to the network
/// input, which training never uses.
pub fn backward_params<T: Scalar>(
    graph: &NetGraph,
    weights: &WeightStore<T>,
    pass: &ForwardPass<T>,
    head_grads: &IndexMap<String, Tensor<T>>,
) -> Result<Gradients<T>> {
    backward_impl(graph, weights, pass, head_grads, false)
}

fn backward_impl<T: Scalar>(
    graph: &NetGraph,
    weights: &WeightStore<T>,
    pass: &ForwardPass<T>,
    head_grads: &IndexMap<String, Tensor<T>>,
    want_input: bool,
) -> Result<Gradients<T>> {
    let tape = pass.tape.as_ref().ok_or(Error::NotRecorded)?;
    let layers = graph.layers();
    if tape.values.len() != layers.len() {
        return Err(Error::Graph("forward pass was recorded on a different graph".into()));
    }
    let mut grads: Vec<Option<Tensor<T>>> = vec![None; layers.len()];
    for (name, j) in graph.output_indices() {
        if let Some(g) = head_grads.get(name) {
            if g.shape() != tape.values[*j].shape() {
                return Err(Error::shape(
                    "backward",
                    format!("gradient for `{name}` is {} but head is {}", g.shape(), tape.values[*j].shape()),
                ));
            }
            accumulate(&mut grads[*j], g.clone())?;
        }
    }
    let mut params = weights.zeros_like();
    let mut input_grad: Option<Tensor<T>> = None;

    for i in (0..layers.len()).rev() {
        let Some(mut g) = grads[i].take() else {
            continue;
        };
        let layer = &layers[i];
        let srcs: Vec<&Tensor<T>> = graph
            .sources(i)
            .iter()
            .map(|s| match *s {
                Source::Input => &tape.input,
                Source::Layer(j) => &tape.values[j],
            })
            .collect();

        if let Some(pre) = &tape.pre_act[i] {
            let act = layer.kind.activation().expect("pre-activation implies activation");
            g = activate_backward(pre, &g, act)?;
        }
        if let Some(slot) = tape.bn_slot[i] {
            let (_, cache) = &pass.bn_caches[slot];
            let gamma = &weights
                .get(&layer.id)
                .and_then(|p| p.bn.as_ref())
                .ok_or_else(|| Error::MissingWeights(layer.id.clone()))?
                .gamma;
            let bg = batch_norm_backward(cache, gamma, &g)?;
            let dst = params.get_mut(&layer.id).and_then(|p| p.bn.as_mut()).expect("zeros_like mirrors weights");
            dst.gamma = bg.gamma;
            dst.beta = bg.beta;
            g = bg.input;
        }
        if layer.kind.has_bias() {
            let sums = crate::tensor::conv::channel_sums(&g);
            params.get_mut(&layer.id).expect("mirrors weights").bias = Some(sums);
        }

        let input_grads: Vec<Tensor<T>> = match layer.kind {
            LayerKind::Conv { .. } | LayerKind::Pointwise { .. } => {
                let (stride, pad) = match layer.kind {
                    LayerKind::Conv { k, stride, .. } => (stride, k / 2),
                    _ => (1, 0),
                };
                let w = kernel_of(weights, &layer.id)?;
                let need = want_input || !matches!(graph.sources(i)[0], Source::Input);
                let (gi, gw) = conv2d_grads(srcs[0], w, &g, stride, pad, need)?;
                params.get_mut(&layer.id).expect("mirrors weights").weight = Some(gw);
                gi.into_iter().collect()
            }
            LayerKind::Depthwise { k, stride, .. } => {
                let w = kernel_of(weights, &layer.id)?;
                let cg = depthwise_conv2d_backward(srcs[0], w, &g, stride, k / 2)?;
                params.get_mut(&layer.id).expect("mirrors weights").weight = Some(cg.weights);
                vec![cg.input]
            }
            LayerKind::BatchNorm | LayerKind::Activation(_) | LayerKind::YoloHead { .. } => vec![g],
            LayerKind::MaxPool2 => vec![max_pool2_backward(srcs[0], &g)?],
            LayerKind::Upsample2 => vec![upsample2_backward(&g)?],
            LayerKind::Concat => {
                let chans: Vec<usize> = srcs.iter().map(|s| s.shape().c).collect();
                concat_channels_backward(&g, &chans)?
            }
        };

        for (src, gi) in graph.sources(i).iter().zip(input_grads) {
            match *src {
                Source::Input => accumulate(&mut input_grad, gi)?,
                Source::Layer(j) => accumulate(&mut grads[j], gi)?,
            }
        }
    }

    Ok(Gradients { params, input: want_input.then(|| input_grad.unwrap_or_else(|| Tensor::zeros(tape.input.shape()))) })
}

fn kernel_of<'a, T: Scalar>(weights: &'a WeightStore<T>, id: &str) -> Result<&'a Tensor<T>> {
    weights.get(id).and_then(|p| p.weight.as_ref()).ok_or_else(|| Error::MissingWeights(id.to_string()))
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}
