use std::fmt::Write as _;
use std::str::FromStr;

use crate::augment::AugmentConfig;
use crate::detection::AnchorSet;
use crate::error::{Error, Result};
use crate::graph::NetGraph;
use crate::model::BtpConfig;
use crate::tensor::Activation;

/// Which builder produces the network.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ModelKind {
    Toy,
    Reference,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(ModelKind::Toy),
            "reference" => Ok(ModelKind::Reference),
            other => Err(Error::Invalid(format!("unknown model `{other}` (toy or reference)"))),
        }
    }
}

impl ModelKind {
    fn name(self) -> &'static str {
        match self {
            ModelKind::Toy => "toy",
            ModelKind::Reference => "reference",
        }
    }
}

/// Everything a training run depends on. Serialized as flat `key = value`
/// lines using the field names.
#[derive(Clone, PartialEq, Debug)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub decay: f64,
    pub batch: usize,
    pub subdivisions: usize,
    /// Iterations at which the rate is multiplied by `scale`.
    pub steps: Vec<usize>,
    pub scale: f64,
    pub max_iter: usize,
    /// Linear ramp of the rate over the first `burn_in` iterations.
    pub burn_in: usize,
    pub warmup_act: Activation,
    pub final_act: Activation,
    /// First iteration that runs with `final_act`.
    pub act_switch: usize,
    pub mixup: bool,
    pub cutmix: bool,
    pub mosaic: bool,
    pub geometric: bool,
    pub aug_prob: f64,
    pub bn: bool,
    pub input_size: usize,
    pub seed: u64,
    /// Evaluate on the held-out split every this many iterations (0: only at the end).
    pub eval_every: usize,
    /// Stop as soon as an evaluation reaches this mAP.
    pub target_map: Option<f64>,
    pub model: ModelKind,
    /// Fitted on the training boxes when unset.
    pub anchors: Option<AnchorSet>,
    /// Fraction of the dataset used for training when splitting.
    pub train_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.0013,
            momentum: 0.949,
            decay: 0.0005,
            batch: 16,
            subdivisions: 1,
            steps: vec![1200, 1800],
            scale: 0.1,
            max_iter: 2400,
            burn_in: 200,
            warmup_act: Activation::Relu,
            final_act: Activation::Mish,
            act_switch: 1000,
            mixup: false,
            cutmix: false,
            mosaic: false,
            geometric: true,
            aug_prob: 0.5,
            bn: true,
            input_size: 256,
            seed: 0,
            eval_every: 200,
            target_map: None,
            model: ModelKind::Toy,
            anchors: None,
            train_ratio: 0.8,
        }
    }
}

fn parse_value<V: FromStr>(line: usize, key: &str, v: &str) -> Result<V> {
    v.parse().map_err(|_| Error::Parse { line, msg: format!("bad value `{v}` for `{key}`") })
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::Parse { line, msg: format!("bad boolean `{v}` for `{key}`") }),
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.batch == 0 || self.subdivisions == 0 || !self.batch.is_multiple_of(self.subdivisions) {
            return bad(format!(
                "batch {} must be a positive multiple of subdivisions {}",
                self.batch, self.subdivisions
            ));
        }
        if !(self.scale > 0.0 && self.scale < 1.0) {
            return bad(format!("scale {} outside (0, 1)", self.scale));
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 {} must be finite and non-negative", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.decay.is_nan() || self.decay < 0.0 {
            return bad("momentum must lie in [0, 1) and decay be non-negative".into());
        }
        if self.steps.windows(2).any(|w| w[0] > w[1]) {
            return bad(format!("steps {:?} are not ascending", self.steps));
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(32) {
            return bad(format!("input_size {} must be a positive multiple of 32", self.input_size));
        }
        if !(0.0..=1.0).contains(&self.aug_prob) || !(self.train_ratio > 0.0 && self.train_ratio <= 1.0) {
            return bad("aug_prob must lie in [0, 1] and train_ratio in (0, 1]".into());
        }
        Ok(())
    }

    pub fn micro_batch(&self) -> usize {
        self.batch / self.subdivisions
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            geometric: self.geometric,
            mixup: self.mixup,
            cutmix: self.cutmix,
            mosaic: self.mosaic,
            prob: self.aug_prob,
            ..AugmentConfig::default()
        }
    }

    /// Activation in force at `iteration`.
    pub fn activation_at(&self, iteration: usize) -> Activation {
        if iteration < self.act_switch {
            self.warmup_act
        } else {
            self.final_act
        }
    }

    /// Network for `classes` classes, built with the final activation.
    pub fn build_graph(&self, classes: usize) -> Result<NetGraph> {
        let mut b = match self.model {
            ModelKind::Toy => BtpConfig::toy(classes),
            ModelKind::Reference => BtpConfig::reference(classes),
        };
        b.act = self.final_act;
        b.bn = self.bn;
        b.build()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| Error::Parse { line, msg: format!("expected `key = value`, found `{body}`") })?;
            cfg.set(line, key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key = value` assignment; `line` is only for messages.
    pub fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        match key {
            "lr0" => self.lr0 = parse_value(line, key, v)?,
            "momentum" => self.momentum = parse_value(line, key, v)?,
            "decay" => self.decay = parse_value(line, key, v)?,
            "batch" => self.batch = parse_value(line, key, v)?,
            "subdivisions" => self.subdivisions = parse_value(line, key, v)?,
            "steps" => {
                self.steps = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|s| parse_value(line, key, s.trim())).collect::<Result<_>>()?
                }
            }
            "scale" => self.scale = parse_value(line, key, v)?,
            "max_iter" => self.max_iter = parse_value(line, key, v)?,
            "burn_in" => self.burn_in = parse_value(line, key, v)?,
            "warmup_act" => self.warmup_act = parse_value(line, key, v)?,
            "final_act" => self.final_act = parse_value(line, key, v)?,
            "act_switch" => self.act_switch = parse_value(line, key, v)?,
            "mixup" => self.mixup = parse_bool(line, key, v)?,
            "cutmix" => self.cutmix = parse_bool(line, key, v)?,
            "mosaic" => self.mosaic = parse_bool(line, key, v)?,
            "geometric" => self.geometric = parse_bool(line, key, v)?,
            "aug_prob" => self.aug_prob = parse_value(line, key, v)?,
            "bn" => self.bn = parse_bool(line, key, v)?,
            "input_size" => self.input_size = parse_value(line, key, v)?,
            "seed" => self.seed = parse_value(line, key, v)?,
            "eval_every" => self.eval_every = parse_value(line, key, v)?,
            "target_map" => {
                self.target_map = match v {
                    "" | "none" => None,
                    _ => Some(parse_value(line, key, v)?),
                }
            }
            "model" => self.model = parse_value(line, key, v)?,
            "anchors" => {
                self.anchors = match v {
                    "" | "auto" => None,
                    _ => Some(v.parse().map_err(|e: Error| Error::Parse { line, msg: e.to_string() })?),
                }
            }
            "train_ratio" => self.train_ratio = parse_value(line, key, v)?,
            other => return Err(Error::Parse { line, msg: format!("unknown key `{other}`") }),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let steps: Vec<String> = self.steps.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "lr0 = {}", self.lr0);
        let _ = writeln!(s, "momentum = {}", self.momentum);
        let _ = writeln!(s, "decay = {}", self.decay);
        let _ = writeln!(s, "batch = {}", self.batch);
        let _ = writeln!(s, "subdivisions = {}", self.subdivisions);
        let _ = writeln!(s, "steps = {}", steps.join(","));
        let _ = writeln!(s, "scale = {}", self.scale);
        let _ = writeln!(s, "max_iter = {}", self.max_iter);
        let _ = writeln!(s, "burn_in = {}", self.burn_in);
        let _ = writeln!(s, "warmup_act = {}", self.warmup_act);
        let _ = writeln!(s, "final_act = {}", self.final_act);
        let _ = writeln!(s, "act_switch = {}", self.act_switch);
        let _ = writeln!(s, "mixup = {}", self.mixup);
        let _ = writeln!(s, "cutmix = {}", self.cutmix);
        let _ = writeln!(s, "mosaic = {}", self.mosaic);
        let _ = writeln!(s, "geometric = {}", self.geometric);
        let _ = writeln!(s, "aug_prob = {}", self.aug_prob);
        let _ = writeln!(s, "bn = {}", self.bn);
        let _ = writeln!(s, "input_size = {}", self.input_size);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        let target = self.target_map.map_or("none".to_string(), |m| m.to_string());
        let _ = writeln!(s, "target_map = {target}");
        let _ = writeln!(s, "model = {}", self.model.name());
        let anchors = self.anchors.as_ref().map_or("auto".to_string(), |a| a.to_string());
        let _ = writeln!(s, "anchors = {anchors}");
        let _ = writeln!(s, "train_ratio = {}", self.train_ratio);
        s
    }
}
