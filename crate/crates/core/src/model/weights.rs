//! Parameter storage and the `BTPW` binary weights format.
//!
//! Layout (little-endian): magic `BTPW`, version `u16` = 1, layer count `u32`,
//! then per layer: id length `u16`, UTF-8 id, blob count `u8`, and per blob:
//! rank `u8`, `rank` dims as `u32`, then the data as `f32`. Blob order is
//! kernel (rank 4), bias, then gamma, beta, running mean, running var.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{ForwardPass, NetGraph};
use crate::scalar::Scalar;
use crate::tensor::{BnParams, Shape, Tensor};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"BTPW";
pub const WEIGHTS_VERSION: u16 = 1;

#[derive(Clone, PartialEq, Debug)]
pub struct LayerParams<T: Scalar> {
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Vec<T>>,
    pub bn: Option<BnParams<T>>,
}

impl<T: Scalar> LayerParams<T> {
    fn zeros_like(&self) -> Self {
        LayerParams {
            weight: self.weight.as_ref().map(|w| Tensor::zeros(w.shape())),
            bias: self.bias.as_ref().map(|b| vec![T::zero(); b.len()]),
            bn: self.bn.as_ref().map(|b| BnParams {
                gamma: vec![T::zero(); b.channels()],
                beta: vec![T::zero(); b.channels()],
                running_mean: vec![T::zero(); b.channels()],
                running_var: vec![T::zero(); b.channels()],
            }),
        }
    }

    pub fn num_params(&self) -> usize {
        self.weight.as_ref().map_or(0, |w| w.shape().len())
            + self.bias.as_ref().map_or(0, Vec::len)
            + self.bn.as_ref().map_or(0, |b| 4 * b.channels())
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct WeightStore<T: Scalar = f32> {
    entries: IndexMap<String, LayerParams<T>>,
}

impl<T: Scalar> Default for WeightStore<T> {
    fn default() -> Self {
        WeightStore { entries: IndexMap::new() }
    }
}

/// Layer id, kernel shape, bias length, batch-norm channels.
type Block = (String, Option<Shape>, Option<usize>, Option<usize>);

/// Expected parameter blocks for every parameterized layer of a graph.
fn expected_layout(graph: &NetGraph) -> Result<Vec<Block>> {
    let channels = graph.channels()?;
    let mut out = Vec::new();
    for (i, layer) in graph.layers().iter().enumerate() {
        if !layer.kind.is_parameterized() {
            continue;
        }
        let in_c = match graph.sources(i)[0] {
            crate::graph::Source::Input => graph.input_channels(),
            crate::graph::Source::Layer(j) => channels[j],
        };
        let out_c = channels[i];
        out.push((
            layer.id.clone(),
            layer.kind.kernel_shape(in_c),
            layer.kind.has_bias().then_some(out_c),
            layer.kind.has_bn().then_some(out_c),
        ));
    }
    Ok(out)
}

impl<T: Scalar> WeightStore<T> {
    /// He-uniform kernels (bound sqrt(6 / fan_in)), zero biases, identity
    /// batch norm. Layers are initialized in declaration order from one
    /// ChaCha stream seeded with `seed`.
    pub fn init(graph: &NetGraph, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = IndexMap::new();
        for (id, kernel, bias, bn) in expected_layout(graph)? {
            let weight = kernel.map(|s| {
                let fan_in = (s.c * s.h * s.w) as f64;
                let bound = (6.0 / fan_in).sqrt();
                let data = (0..s.len()).map(|_| T::lit(rng.random_range(-bound..bound))).collect();
                Tensor::from_vec(s, data).expect("shape matches data")
            });
            entries.insert(
                id,
                LayerParams { weight, bias: bias.map(|c| vec![T::zero(); c]), bn: bn.map(BnParams::identity) },
            );
        }
        Ok(WeightStore { entries })
    }

    /// Same structure, all zeros (gradient and momentum buffers).
    pub fn zeros_like(&self) -> Self {
        WeightStore { entries: self.entries.iter().map(|(k, v)| (k.clone(), v.zeros_like())).collect() }
    }

    pub fn get(&self, id: &str) -> Option<&LayerParams<T>> {
        self.entries.get(id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut LayerParams<T>> {
        self.entries.get_mut(id)
    }

    pub fn insert(&mut self, id: impl Into<String>, params: LayerParams<T>) {
        self.entries.insert(id.into(), params);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &LayerParams<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut LayerParams<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.entries.values().map(LayerParams::num_params).sum()
    }

    pub fn cast<U: Scalar>(&self) -> WeightStore<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect::<Vec<U>>();
        WeightStore {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        LayerParams {
                            weight: p.weight.as_ref().map(Tensor::cast),
                            bias: p.bias.as_deref().map(conv),
                            bn: p.bn.as_ref().map(|b| BnParams {
                                gamma: conv(&b.gamma),
                                beta: conv(&b.beta),
                                running_mean: conv(&b.running_mean),
                                running_var: conv(&b.running_var),
                            }),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Verifies that the store covers `graph` exactly, naming the first layer
    /// whose parameters are missing or mis-shaped.
    pub fn check(&self, graph: &NetGraph) -> Result<()> {
        let layout = expected_layout(graph)?;
        for (id, kernel, bias, bn) in &layout {
            let p = self.entries.get(id).ok_or_else(|| Error::MissingWeights(id.clone()))?;
            let found_kernel = p.weight.as_ref().map(|w| w.shape());
            let found_bias = p.bias.as_ref().map(Vec::len);
            let found_bn = p.bn.as_ref().map(BnParams::channels);
            if found_kernel != *kernel || found_bias != *bias || found_bn != *bn {
                return Err(Error::DimMismatch {
                    layer: id.clone(),
                    expected: describe(*kernel, *bias, *bn),
                    found: describe(found_kernel, found_bias, found_bn),
                });
            }
        }
        if self.entries.len() != layout.len() {
            return Err(Error::Graph(format!(
                "weights hold {} layers, graph has {} parameterized layers",
                self.entries.len(),
                layout.len()
            )));
        }
        Ok(())
    }

    /// Folds batch statistics recorded by a training-mode forward pass into
    /// the running statistics.
    pub fn update_running_stats(&mut self, pass: &ForwardPass<T>) {
        for (id, cache) in pass.bn_caches() {
            if let Some(bn) = self.entries.get_mut(id).and_then(|p| p.bn.as_mut()) {
                bn.update_running(cache);
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (id, p) in &self.entries {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            let mut blobs: Vec<(Vec<usize>, &[T])> = Vec::new();
            if let Some(w) = &p.weight {
                let s = w.shape();
                blobs.push((vec![s.n, s.c, s.h, s.w], w.data()));
            }
            if let Some(b) = &p.bias {
                blobs.push((vec![b.len()], b));
            }
            if let Some(bn) = &p.bn {
                for v in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
                    blobs.push((vec![v.len()], v));
                }
            }
            out.push(blobs.len() as u8);
            for (dims, data) in blobs {
                out.push(dims.len() as u8);
                for d in dims {
                    out.extend_from_slice(&(d as u32).to_le_bytes());
                }
                for v in data {
                    out.extend_from_slice(&v.to_f32_bits().to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != WEIGHTS_MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.u16("version")?;
        if version != WEIGHTS_VERSION {
            return Err(Error::Version(version));
        }
        let count = r.u32("layer count")? as usize;
        let mut entries = IndexMap::with_capacity(count.min(1 << 16));
        for li in 0..count {
            let len = r.u16("id length")? as usize;
            let id = std::str::from_utf8(r.take(len, "layer id")?)
                .map_err(|_| Error::Invalid(format!("layer {li}: id is not UTF-8")))?
                .to_string();
            let nblobs = r.u8("blob count")? as usize;
            let mut blobs: Vec<(Vec<usize>, Vec<T>)> = Vec::with_capacity(nblobs);
            for _ in 0..nblobs {
                let rank = r.u8("rank")? as usize;
                let mut dims = Vec::with_capacity(rank);
                for _ in 0..rank {
                    dims.push(r.u32("dims")? as usize);
                }
                let n: usize = dims.iter().product();
                let raw = r.take(n.checked_mul(4).ok_or(Error::Truncated("blob size".into()))?, "blob data")?;
                let data = raw
                    .chunks_exact(4)
                    .map(|c| T::from_f32_bits(u32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                    .collect();
                blobs.push((dims, data));
            }
            let params = assemble(&id, blobs)?;
            if entries.insert(id.clone(), params).is_some() {
                return Err(Error::Invalid(format!("duplicate layer `{id}` in weights")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Invalid(format!("{} trailing bytes after {count} layers", bytes.len() - r.pos)));
        }
        Ok(WeightStore { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads and checks against `graph`.
    pub fn load_for(path: impl AsRef<Path>, graph: &NetGraph) -> Result<Self> {
        let store = Self::load(path)?;
        store.check(graph)?;
        Ok(store)
    }
}

fn describe(kernel: Option<Shape>, bias: Option<usize>, bn: Option<usize>) -> String {
    let mut parts = Vec::new();
    if let Some(k) = kernel {
        parts.push(format!("kernel {k}"));
    }
    if let Some(b) = bias {
        parts.push(format!("bias {b}"));
    }
    if let Some(b) = bn {
        parts.push(format!("bn {b}"));
    }
    if parts.is_empty() {
        "no parameters".into()
    } else {
        parts.join(", ")
    }
}

fn assemble<T: Scalar>(id: &str, blobs: Vec<(Vec<usize>, Vec<T>)>) -> Result<LayerParams<T>> {
    let bad = || Error::Invalid(format!("layer `{id}`: unrecognized blob layout"));
    let mut it = blobs.into_iter().peekable();
    let weight = match it.peek() {
        Some((dims, _)) if dims.len() == 4 => {
            let (dims, data) = it.next().expect("peeked");
            Some(Tensor::from_vec(Shape::new(dims[0], dims[1], dims[2], dims[3]), data)?)
        }
        _ => None,
    };
    let rest: Vec<(Vec<usize>, Vec<T>)> = it.collect();
    if rest.iter().any(|(d, _)| d.len() != 1) {
        return Err(bad());
    }
    let mut vecs: Vec<Vec<T>> = rest.into_iter().map(|(_, v)| v).collect();
    let (bias, bn) = match vecs.len() {
        0 => (None, None),
        1 => (vecs.pop(), None),
        4 | 5 => {
            let var = vecs.pop().expect("len checked");
            let mean = vecs.pop().expect("len checked");
            let beta = vecs.pop().expect("len checked");
            let gamma = vecs.pop().expect("len checked");
            let bn = BnParams { gamma, beta, running_mean: mean, running_var: var };
            let c = bn.channels();
            if [bn.beta.len(), bn.running_mean.len(), bn.running_var.len()].iter().any(|&l| l != c) {
                return Err(bad());
            }
            (vecs.pop(), Some(bn))
        }
        _ => return Err(bad()),
    };
    Ok(LayerParams { weight, bias, bn })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Truncated(format!("{what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
