use std::collections::{HashMap, HashSet};

use super::{LayerKind, LayerSpec, NetGraph, INPUT_ID};
use crate::error::{Error, Result};
use crate::tensor::Activation;

/// Parses the line-based network description.
///
/// ```text
/// # comment
/// input channels=3
/// layer <id> <kind> key=value ... [inputs=<id,id>]
/// output <head-name> <id>
/// ```
///
/// `inputs` defaults to the previous layer (or `input` for the first layer).
pub fn parse_graph(text: &str) -> Result<NetGraph> {
    let mut input_channels = 3;
    let mut layers: Vec<LayerSpec> = Vec::new();
    let mut outputs = Vec::new();
    let mut declared: HashSet<String> = HashSet::new();
    let mut output_lines: HashMap<String, usize> = HashMap::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |msg: String| Error::Parse { line: line_no, msg };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("input") => {
                let kv = KeyValues::parse(tokens, line_no)?;
                input_channels = kv.usize("channels")?.unwrap_or(3);
                kv.finish(&["channels"])?;
            }
            Some("output") => {
                let name = tokens.next().ok_or_else(|| err("output needs a head name".into()))?;
                let id = tokens.next().ok_or_else(|| err("output needs a layer id".into()))?;
                if tokens.next().is_some() {
                    return Err(err("trailing tokens after output".into()));
                }
                if !declared.contains(id) {
                    return Err(err(format!("output `{name}` references undeclared id `{id}`")));
                }
                if output_lines.insert(name.to_string(), line_no).is_some() {
                    return Err(err(format!("duplicate output `{name}`")));
                }
                outputs.push((name.to_string(), id.to_string()));
            }
            Some("layer") => {
                let id = tokens.next().ok_or_else(|| err("layer needs an id".into()))?;
                let kind_name = tokens.next().ok_or_else(|| err(format!("layer `{id}` needs a kind")))?;
                if id == INPUT_ID {
                    return Err(err(format!("`{INPUT_ID}` is a reserved id")));
                }
                if declared.contains(id) {
                    return Err(err(format!("duplicate layer id `{id}`")));
                }
                let kv = KeyValues::parse(tokens, line_no)?;
                let (kind, allowed) = parse_kind(kind_name, &kv)?;
                let inputs = match kv.get("inputs") {
                    Some(list) => list.split(',').map(str::to_string).collect::<Vec<_>>(),
                    None => vec![layers.last().map_or(INPUT_ID.to_string(), |l| l.id.clone())],
                };
                for src in &inputs {
                    if src != INPUT_ID && !declared.contains(src) {
                        return Err(err(format!("layer `{id}` references undeclared id `{src}`")));
                    }
                }
                let mut allowed = allowed.to_vec();
                allowed.push("inputs");
                kv.finish(&allowed)?;
                declared.insert(id.to_string());
                layers.push(LayerSpec { id: id.to_string(), kind, inputs });
            }
            Some(other) => return Err(err(format!("unknown directive `{other}`"))),
            None => unreachable!("blank lines are skipped"),
        }
    }
    NetGraph::new(input_channels, layers, outputs).map_err(|e| match e {
        Error::Graph(msg) => Error::Parse { line: 0, msg },
        other => other,
    })
}

fn parse_kind(name: &str, kv: &KeyValues) -> Result<(LayerKind, &'static [&'static str])> {
    let act = || -> Result<Activation> {
        match kv.get("act") {
            None => Ok(Activation::Linear),
            Some(s) => s.parse().map_err(|_| kv.error(format!("unknown activation `{s}`"))),
        }
    };
    Ok(match name {
        "conv" => {
            let bn = kv.flag("bn")?.unwrap_or(false);
            (
                LayerKind::Conv {
                    m: kv.required("m")?,
                    k: kv.required("k")?,
                    stride: kv.usize("stride")?.unwrap_or(1),
                    bn,
                    act: act()?,
                    bias: kv.flag("bias")?.unwrap_or(!bn),
                },
                &["m", "k", "stride", "bn", "act", "bias"],
            )
        }
        "depthwise" => {
            let bn = kv.flag("bn")?.unwrap_or(false);
            (
                LayerKind::Depthwise {
                    k: kv.required("k")?,
                    stride: kv.usize("stride")?.unwrap_or(1),
                    bn,
                    act: act()?,
                    bias: kv.flag("bias")?.unwrap_or(!bn),
                },
                &["k", "stride", "bn", "act", "bias"],
            )
        }
        "pointwise" => {
            let bn = kv.flag("bn")?.unwrap_or(false);
            (
                LayerKind::Pointwise { m: kv.required("m")?, bn, act: act()?, bias: kv.flag("bias")?.unwrap_or(!bn) },
                &["m", "bn", "act", "bias"],
            )
        }
        "batchnorm" => (LayerKind::BatchNorm, &[]),
        "activation" => {
            if kv.get("act").is_none() {
                return Err(kv.error("activation layer needs `act`".into()));
            }
            (LayerKind::Activation(act()?), &["act"])
        }
        "maxpool2" => (LayerKind::MaxPool2, &[]),
        "upsample2" => (LayerKind::Upsample2, &[]),
        "concat" => (LayerKind::Concat, &[]),
        "yolo-head" => (LayerKind::YoloHead { classes: kv.required("classes")? }, &["classes"]),
        other => return Err(kv.error(format!("unknown layer kind `{other}`"))),
    })
}

struct KeyValues<'a> {
    line: usize,
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> KeyValues<'a> {
    fn parse(tokens: impl Iterator<Item = &'a str>, line: usize) -> Result<Self> {
        let mut pairs: Vec<(&str, &str)> = Vec::new();
        for tok in tokens {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Parse { line, msg: format!("expected key=value, found `{tok}`") })?;
            if pairs.iter().any(|(seen, _)| *seen == k) {
                return Err(Error::Parse { line, msg: format!("key `{k}` given twice") });
            }
            pairs.push((k, v));
        }
        Ok(KeyValues { line, pairs })
    }

    fn error(&self, msg: String) -> Error {
        Error::Parse { line: self.line, msg }
    }

    fn get(&self, key: &str) -> Option<&'a str> {
        self.pairs.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    fn usize(&self, key: &str) -> Result<Option<usize>> {
        self.get(key)
            .map(|v| {
                v.parse::<usize>().map_err(|_| self.error(format!("`{key}` must be a nonnegative integer, got `{v}`")))
            })
            .transpose()
    }

    fn required(&self, key: &str) -> Result<usize> {
        self.usize(key)?.ok_or_else(|| self.error(format!("missing parameter `{key}`")))
    }

    fn flag(&self, key: &str) -> Result<Option<bool>> {
        match self.get(key) {
            None => Ok(None),
            Some("0") => Ok(Some(false)),
            Some("1") => Ok(Some(true)),
            Some(v) => Err(self.error(format!("`{key}` must be 0 or 1, got `{v}`"))),
        }
    }

    fn finish(&self, allowed: &[&str]) -> Result<()> {
        match self.pairs.iter().find(|(k, _)| !allowed.contains(k)) {
            Some((k, _)) => Err(self.error(format!("unexpected key `{k}`"))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_layer_document() {
        let g =
            parse_graph("# tiny\nlayer c1 conv m=4 k=3 bn=1\nlayer a1 activation act=mish\noutput out a1\n").unwrap();
        assert_eq!(g.layers().len(), 2);
        assert_eq!(g.layers()[1].inputs, vec!["c1"]);
        assert_eq!(g.layers()[0].inputs, vec!["input"]);
        assert!(!g.layers()[0].kind.has_bias());
    }

    #[test]
    fn undeclared_reference_names_line_and_id() {
        let err = parse_graph("layer c1 conv m=4 k=3\n\nlayer c2 conv m=4 k=3 inputs=x9\n").unwrap_err();
        match err {
            Error::Parse { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("x9"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn error_paths() {
        let cases = [
            ("layer a bogus\n", 1, "unknown layer kind"),
            ("layer a conv k=3\n", 1, "missing parameter `m`"),
            ("layer a conv m=2 k=3\nlayer a conv m=2 k=3\n", 2, "duplicate"),
            ("layer a conv m=2 k=3 foo=1\n", 1, "unexpected key"),
            ("layer a conv m=2 k=3 act=tanh\n", 1, "unknown activation"),
            ("layer a conv m=2 k=3\noutput h b\n", 2, "undeclared"),
            ("frobnicate\n", 1, "unknown directive"),
        ];
        for (text, line, needle) in cases {
            match parse_graph(text) {
                Err(Error::Parse { line: l, msg }) => {
                    assert_eq!(l, line, "{text}");
                    assert!(msg.contains(needle), "{text}: {msg}");
                }
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn text_roundtrip() {
        let text = "input channels=3\nlayer c conv m=8 k=3 stride=2 bn=1 act=leaky\nlayer d depthwise k=3 bn=1 act=mish\nlayer p pointwise m=8\nlayer cat concat inputs=c,p\nlayer up upsample2\noutput h up\n";
        let g = parse_graph(text).unwrap();
        assert_eq!(parse_graph(&g.to_text()).unwrap(), g);
    }
}
