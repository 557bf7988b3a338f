use crate::error::{Error, Result};
use crate::graph::{LayerKind, LayerSpec, NetGraph};
use crate::tensor::Activation;

/// Class count of the reference dataset (head width 3·(84+5) = 267).
pub const REFERENCE_CLASSES: usize = 84;

#[derive(Clone, Copy, PartialEq, Debug)]
pub struct TpdpConfig {
    pub n: usize,
    /// PDP2 inner width multiplier.
    pub expansion: usize,
    pub act: Activation,
    pub bn: bool,
}

impl TpdpConfig {
    pub fn new(n: usize) -> Self {
        TpdpConfig { n, expansion: 2, act: Activation::Mish, bn: true }
    }
}

fn pw(id: String, input: &str, m: usize, act: Activation, bn: bool) -> LayerSpec {
    LayerSpec::new(id, LayerKind::Pointwise { m, bn, act, bias: !bn }, &[input])
}

fn dw(id: String, input: &str, act: Activation, bn: bool) -> LayerSpec {
    LayerSpec::new(id, LayerKind::Depthwise { k: 3, stride: 1, bn, act, bias: !bn }, &[input])
}

fn conv(id: String, input: &str, m: usize, k: usize, stride: usize, act: Activation, bn: bool) -> LayerSpec {
    LayerSpec::new(id, LayerKind::Conv { m, k, stride, bn, act, bias: !bn }, &[input])
}

fn pdp(prefix: &str, input: &str, inner: usize, out: usize, cfg: &TpdpConfig) -> Vec<LayerSpec> {
    let a = format!("{prefix}.pw1");
    let b = format!("{prefix}.dw");
    vec![
        pw(a.clone(), input, inner, cfg.act, cfg.bn),
        dw(b.clone(), &a, cfg.act, cfg.bn),
        pw(format!("{prefix}.pw2"), &b, out, Activation::Linear, cfg.bn),
    ]
}

/// Pointwise to `n`, 3×3 depthwise, linear pointwise to `n`.
pub fn build_pdp1(prefix: &str, input: &str, cfg: &TpdpConfig) -> Vec<LayerSpec> {
    pdp(prefix, input, cfg.n, cfg.n, cfg)
}

/// As PDP1 but the depthwise runs at `expansion·n` channels.
pub fn build_pdp2(prefix: &str, input: &str, cfg: &TpdpConfig) -> Vec<LayerSpec> {
    pdp(prefix, input, cfg.expansion * cfg.n, cfg.n, cfg)
}

/// Compresses a 2n-channel concat back to `n`.
pub fn build_pdp3(prefix: &str, input: &str, cfg: &TpdpConfig) -> Vec<LayerSpec> {
    pdp(prefix, input, cfg.n, cfg.n, cfg)
}

/// Full block; the last layer (`{prefix}.pool`) emits 2n channels at half
/// resolution.
pub fn build_tpdp(prefix: &str, input: &str, cfg: &TpdpConfig) -> Vec<LayerSpec> {
    let p1 = format!("{prefix}.pdp1");
    let p2 = format!("{prefix}.pdp2");
    let p3 = format!("{prefix}.pdp3");
    let out1 = format!("{p1}.pw2");
    let out2 = format!("{p2}.pw2");
    let out3 = format!("{p3}.pw2");
    let cat12 = format!("{prefix}.cat12");
    let cat13 = format!("{prefix}.cat13");
    let mut layers = build_pdp1(&p1, input, cfg);
    layers.extend(build_pdp2(&p2, &out1, cfg));
    layers.push(LayerSpec::new(cat12.clone(), LayerKind::Concat, &[&out1, &out2]));
    layers.extend(build_pdp3(&p3, &cat12, cfg));
    layers.push(LayerSpec::new(cat13.clone(), LayerKind::Concat, &[&out1, &out3]));
    layers.push(LayerSpec::new(format!("{prefix}.pool"), LayerKind::MaxPool2, &[&cat13]));
    layers
}

/// Widths and switches of the two-head network. [`BtpConfig::reference`] is
/// the full-size model; narrower settings give toy models with the same
/// topology.
#[derive(Clone, PartialEq, Debug)]
pub struct BtpConfig {
    pub classes: usize,
    pub stem: usize,
    /// Second stride-2 convolution before the first block.
    pub down: usize,
    pub tpdp: [usize; 3],
    pub expansion: usize,
    /// Pointwise widening after the last block.
    pub widen: usize,
    pub head1: [usize; 2],
    pub head2: [usize; 3],
    pub act: Activation,
    pub bn: bool,
}

impl BtpConfig {
    pub fn reference(classes: usize) -> Self {
        BtpConfig {
            classes,
            stem: 32,
            down: 64,
            tpdp: [32, 64, 128],
            expansion: 2,
            widen: 512,
            head1: [256, 384],
            head2: [256, 128, 384],
            act: Activation::Mish,
            bn: true,
        }
    }

    pub fn toy(classes: usize) -> Self {
        BtpConfig {
            classes,
            stem: 8,
            down: 16,
            tpdp: [8, 16, 32],
            expansion: 2,
            widen: 64,
            head1: [32, 48],
            head2: [32, 16, 48],
            act: Activation::Mish,
            bn: true,
        }
    }

    pub fn build(&self) -> Result<NetGraph> {
        build_btp(self)
    }
}

pub fn build_btp(cfg: &BtpConfig) -> Result<NetGraph> {
    if cfg.classes == 0 {
        return Err(Error::Invalid("class count must be positive".into()));
    }
    let (act, bn) = (cfg.act, cfg.bn);
    let head_c = 3 * (cfg.classes + 5);
    let mut l = vec![
        conv("stem".into(), "input", cfg.stem, 3, 2, act, bn),
        conv("down".into(), "stem", cfg.down, 3, 2, act, bn),
    ];
    let mut prev = "down".to_string();
    for (i, &n) in cfg.tpdp.iter().enumerate() {
        let prefix = format!("tpdp{}", i + 1);
        let t = TpdpConfig { n, expansion: cfg.expansion, act, bn };
        l.extend(build_tpdp(&prefix, &prev, &t));
        prev = format!("{prefix}.pool");
    }
    l.push(pw("widen".into(), &prev, cfg.widen, act, bn));

    l.push(pw("b1.pw".into(), "widen", cfg.head1[0], act, bn));
    l.push(conv("b1.conv".into(), "b1.pw", cfg.head1[1], 3, 1, act, bn));
    l.push(LayerSpec::new("b1.out", head_conv(head_c), &["b1.conv"]));
    l.push(LayerSpec::new("head1", LayerKind::YoloHead { classes: cfg.classes }, &["b1.out"]));

    l.push(conv("b2.conv".into(), "widen", cfg.head2[0], 3, 1, act, bn));
    l.push(pw("b2.pw".into(), "b2.conv", cfg.head2[1], act, bn));
    l.push(LayerSpec::new("b2.up", LayerKind::Upsample2, &["b2.pw"]));
    l.push(LayerSpec::new("b2.cat", LayerKind::Concat, &["b2.up", "tpdp2.pool"]));
    l.push(conv("b2.fuse".into(), "b2.cat", cfg.head2[2], 3, 1, act, bn));
    l.push(LayerSpec::new("b2.out", head_conv(head_c), &["b2.fuse"]));
    l.push(LayerSpec::new("head2", LayerKind::YoloHead { classes: cfg.classes }, &["b2.out"]));

    NetGraph::new(3, l, vec![("head1".into(), "head1".into()), ("head2".into(), "head2".into())])
}

fn head_conv(m: usize) -> LayerKind {
    LayerKind::Pointwise { m, bn: false, act: Activation::Linear, bias: true }
}

/// Text form of [`build_reference_btp`]`(84)`.
pub const REFERENCE_GRAPH: &str = include_str!("../../assets/btp_reference.net");

/// The full-size network.
pub fn build_reference_btp(num_classes: usize) -> Result<NetGraph> {
    build_btp(&BtpConfig::reference(num_classes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Shape3;

    fn block_graph(layers: Vec<LayerSpec>, in_c: usize) -> NetGraph {
        let last = layers.last().unwrap().id.clone();
        NetGraph::new(in_c, layers, vec![("out".into(), last)]).unwrap()
    }

    #[test]
    fn pdp_widths() {
        let c = TpdpConfig::new(32);
        let g = block_graph(build_pdp1("p", "input", &c), 16);
        assert_eq!(g.walk_shapes((8, 8)).unwrap().last().copied().unwrap(), Shape3 { c: 32, h: 8, w: 8 });

        let g = block_graph(build_pdp2("p", "input", &TpdpConfig::new(64)), 64);
        let shapes = g.walk_shapes((8, 8)).unwrap();
        assert_eq!(shapes[1].c, 128);
        assert_eq!(shapes[2].c, 64);

        let g = block_graph(build_pdp3("p", "input", &c), 64);
        assert_eq!(g.walk_shapes((8, 8)).unwrap().last().copied().unwrap().c, 32);
    }

    #[test]
    fn tpdp_halves_and_doubles() {
        let g = block_graph(build_tpdp("t", "input", &TpdpConfig::new(32)), 32);
        let out = g.walk_shapes((64, 64)).unwrap().last().copied().unwrap();
        assert_eq!(out, Shape3 { c: 64, h: 32, w: 32 });
    }

    #[test]
    fn head_widths() {
        for (c, want) in [(84, 267), (2, 21)] {
            let g = build_reference_btp(c).unwrap();
            for (_, s) in g.head_shapes((512, 512)).unwrap() {
                assert_eq!(s.c, want);
            }
        }
        assert!(build_reference_btp(0).is_err());
    }

    #[test]
    fn shipped_document_matches_builder() {
        let parsed = crate::graph::parse_graph(REFERENCE_GRAPH).unwrap();
        assert_eq!(parsed, build_reference_btp(REFERENCE_CLASSES).unwrap());
    }

    #[test]
    fn depthwise_sandwiched_by_pointwise() {
        let g = build_reference_btp(84).unwrap();
        for (i, l) in g.layers().iter().enumerate() {
            if matches!(l.kind, LayerKind::Depthwise { .. }) {
                assert!(matches!(g.layers()[i - 1].kind, LayerKind::Pointwise { .. }));
                assert!(matches!(g.layers()[i + 1].kind, LayerKind::Pointwise { .. }));
            }
        }
    }
}
