use std::fmt::Write as _;

use serde::Deserialize;

use super::{train_loop, SynthSpec, TrainConfig, TrainData};
use crate::error::{Error, Result};
use crate::graph::NetGraph;
use crate::tensor::Activation;

/// One row of the comparison: augmentation toggles, activation, batch norm.
#[derive(Clone, PartialEq, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationRow {
    #[serde(default)]
    pub mixup: bool,
    #[serde(default)]
    pub cutmix: bool,
    #[serde(default)]
    pub mosaic: bool,
    pub activation: Activation,
    #[serde(default = "yes")]
    pub bn: bool,
}

fn yes() -> bool {
    true
}

impl AblationRow {
    /// `base` with this row's toggles. The warm-up activation is kept unless
    /// the row runs ReLU, in which case the whole run is ReLU.
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.mixup = self.mixup;
        cfg.cutmix = self.cutmix;
        cfg.mosaic = self.mosaic;
        cfg.bn = self.bn;
        cfg.final_act = self.activation;
        if self.activation == Activation::Relu {
            cfg.warmup_act = Activation::Relu;
        }
        cfg
    }
}

/// A set of rows sharing one base configuration, dataset and seed list.
#[derive(Clone, PartialEq, Debug)]
pub struct AblationMatrix {
    pub base: TrainConfig,
    pub synth: SynthSpec,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMatrix {
    #[serde(default)]
    base: toml::Table,
    #[serde(default)]
    synth: SynthSpec,
    #[serde(default)]
    seeds: Vec<u64>,
    row: Vec<AblationRow>,
}

fn toml_scalar(key: &str, v: &toml::Value) -> Result<String> {
    Ok(match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(b) => b.to_string(),
        toml::Value::Array(items) => items.iter().map(|i| toml_scalar(key, i)).collect::<Result<Vec<_>>>()?.join(","),
        _ => return Err(Error::Invalid(format!("base.{key}: unsupported value"))),
    })
}

impl AblationMatrix {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawMatrix = toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
            msg: e.message().to_string(),
        })?;
        let mut base = TrainConfig::default();
        for (k, v) in &raw.base {
            base.set(0, k, &toml_scalar(k, v)?)?;
        }
        base.validate()?;
        raw.synth.validate()?;
        if raw.row.is_empty() {
            return Err(Error::Invalid("ablation matrix has no rows".into()));
        }
        Ok(AblationMatrix {
            base,
            synth: raw.synth,
            seeds: if raw.seeds.is_empty() { vec![0] } else { raw.seeds },
            rows: raw.row,
        })
    }

    /// Training config for `row` and `seed`.
    pub fn config(&self, row: usize, seed: u64) -> TrainConfig {
        let mut cfg = self.rows[row].apply(&self.base);
        cfg.seed = seed;
        cfg
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct AblationResult {
    pub row: usize,
    pub seed: u64,
    /// Final held-out mAP@0.5, or why the run failed.
    pub map: std::result::Result<f64, String>,
    pub iterations: usize,
}

/// Trains every (row, seed) pair of `matrix` on `data`. A run that fails
/// (for example by diverging) is recorded, not propagated.
pub fn run_ablation(
    matrix: &AblationMatrix,
    data: &TrainData<f32>,
    on_done: &mut dyn FnMut(&AblationResult),
) -> Result<Vec<AblationResult>> {
    let classes = data.classes.len();
    let mut out = Vec::new();
    for row in 0..matrix.rows.len() {
        for &seed in &matrix.seeds {
            let cfg = matrix.config(row, seed);
            let graph: NetGraph = cfg.build_graph(classes)?;
            let res = match train_loop(&graph, data, &cfg, &mut |_| {}) {
                Ok(o) => AblationResult {
                    row,
                    seed,
                    map: o.final_map().ok_or_else(|| "no held-out evaluation".to_string()),
                    iterations: o.iterations,
                },
                Err(e) => AblationResult { row, seed, map: Err(e.to_string()), iterations: 0 },
            };
            on_done(&res);
            out.push(res);
        }
    }
    Ok(out)
}

const CHECK: &str = "☑";

/// Markdown table in the layout of the usual augmentation/activation
/// comparison; the mAP column is the mean over seeds.
pub fn ablation_table(matrix: &AblationMatrix, results: &[AblationResult]) -> String {
    let multi = matrix.seeds.len() > 1;
    let mut s = String::from("| Mixup | Cutmix | Mosaic | ReLU | Swish | Mish | ELU | BN | mAP@0.5 |");
    s.push_str(if multi { " per seed |\n" } else { "\n" });
    s.push_str("|:-:|:-:|:-:|:-:|:-:|:-:|:-:|:-:|--:|");
    s.push_str(if multi { "--|\n" } else { "\n" });
    for (i, r) in matrix.rows.iter().enumerate() {
        let mark = |b: bool| if b { CHECK } else { "" };
        let act = |a: Activation| mark(std::mem::discriminant(&r.activation) == std::mem::discriminant(&a));
        let runs: Vec<&AblationResult> = results.iter().filter(|x| x.row == i).collect();
        let ok: Vec<f64> = runs.iter().filter_map(|x| x.map.as_ref().ok().copied()).collect();
        let map = if ok.is_empty() || ok.len() < runs.len() {
            "failed".to_string()
        } else {
            format!("{:.2}%", 100.0 * ok.iter().sum::<f64>() / ok.len() as f64)
        };
        let _ = write!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {map} |",
            mark(r.mixup),
            mark(r.cutmix),
            mark(r.mosaic),
            act(Activation::Relu),
            act(Activation::Swish),
            act(Activation::Mish),
            act(Activation::ELU),
            mark(r.bn),
        );
        if multi {
            let per: Vec<String> = runs
                .iter()
                .map(|x| match &x.map {
                    Ok(m) => format!("{:.2}", 100.0 * m),
                    Err(_) => "failed".into(),
                })
                .collect();
            let _ = write!(s, " {} |", per.join(" / "));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const MATRIX: &str = r#"
seeds = [1, 2]

[base]
max_iter = 10
steps = [5, 8]
input_size = 64

[synth]
num_images = 12
width = 64
height = 64
max_size = 30

[[row]]
activation = "relu"

[[row]]
mixup = true
cutmix = true
mosaic = true
activation = "mish"
bn = false
"#;

    #[test]
    fn parses_and_applies() {
        let m = AblationMatrix::parse(MATRIX).unwrap();
        assert_eq!(m.seeds, vec![1, 2]);
        assert_eq!(m.base.steps, vec![5, 8]);
        assert_eq!(m.synth.num_images, 12);
        assert_eq!(m.synth.min_size, SynthSpec::default().min_size);
        let c0 = m.config(0, 7);
        assert_eq!((c0.warmup_act, c0.final_act, c0.seed), (Activation::Relu, Activation::Relu, 7));
        assert!(c0.bn && !c0.mosaic);
        let c1 = m.config(1, 1);
        assert!(c1.mixup && c1.cutmix && c1.mosaic && !c1.bn);
        assert_eq!(c1.final_act, Activation::Mish);
        assert_eq!(c1.max_iter, 10);
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(matches!(AblationMatrix::parse("seeds = [1]"), Err(Error::Parse { .. })));
        assert!(AblationMatrix::parse("[[row]]\nactivation = \"tanh\"").is_err());
        assert!(AblationMatrix::parse("[base]\nbogus = 1\n[[row]]\nactivation = \"relu\"").is_err());
        assert!(AblationMatrix::parse("[[row]]\nactivation = \"relu\"\nextra = 1").is_err());
    }

    #[test]
    fn table_layout() {
        let m = AblationMatrix::parse(MATRIX).unwrap();
        let res = vec![
            AblationResult { row: 0, seed: 1, map: Ok(0.5), iterations: 10 },
            AblationResult { row: 0, seed: 2, map: Ok(0.7), iterations: 10 },
            AblationResult { row: 1, seed: 1, map: Ok(0.9), iterations: 10 },
            AblationResult { row: 1, seed: 2, map: Err("diverged".into()), iterations: 0 },
        ];
        let t = ablation_table(&m, &res);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("| Mixup | Cutmix | Mosaic | ReLU | Swish | Mish | ELU | BN | mAP@0.5 |"));
        assert_eq!(lines[2], "|  |  |  | ☑ |  |  |  | ☑ | 60.00% | 50.00 / 70.00 |");
        assert_eq!(lines[3], "| ☑ | ☑ | ☑ |  |  | ☑ |  |  | failed | 90.00 / failed |");
    }
}
