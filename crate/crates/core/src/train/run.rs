use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::optim::{accumulate_grads, lr_schedule, sgd_step, SgdParams, SgdState};
use super::{gen_synthetic, SynthSpec, TrainConfig};
use crate::augment::{augment_sample, SoftSample};
use crate::data::{split_dataset, DatasetIndex};
use crate::detection::{detect_images, kmeans_anchors, AnchorSet, DetectParams, DetectionRecord, DEFAULT_NMS_IOU};
use crate::error::{Error, Result};
use crate::eval::{evaluate, ApMode, EvalReport, GroundTruth};
use crate::graph::{backward_params, forward, ForwardOptions, LayerKind, NetGraph, Source};
use crate::loss::{total_loss, LossBreakdown, LossConfig};
use crate::model::WeightStore;
use crate::scalar::Scalar;
use crate::tensor::{Activation, Tensor};

/// Score threshold used for evaluation; low so the whole PR curve is seen.
pub const EVAL_CONF: f64 = 0.005;
/// Initial objectness probability encoded in the head biases.
pub const OBJECTNESS_PRIOR: f64 = 0.01;
const KMEANS_ITERS: usize = 100;

/// Samples held in memory for a run.
#[derive(Clone, Debug)]
pub struct TrainData<T: Scalar = f32> {
    pub classes: Vec<String>,
    pub train: Vec<SoftSample<T>>,
    /// Held-out samples at their original size, with their image names.
    pub test: Vec<(String, SoftSample<T>)>,
}

impl<T: Scalar> TrainData<T> {
    /// Loads the `train` and `test` splits of `index`.
    pub fn load(index: &DatasetIndex) -> Result<Self> {
        let load = |i: usize| -> Result<(String, SoftSample<T>)> {
            let (image, ann) = index.load::<T>(i)?;
            let boxes = index.classes.soft_boxes(&ann)?;
            Ok((ann.image.clone(), SoftSample::new(image, boxes)?))
        };
        let train = index.train.par_iter().map(|&i| load(i).map(|(_, s)| s)).collect::<Result<Vec<_>>>()?;
        let test = index.test.par_iter().map(|&i| load(i)).collect::<Result<Vec<_>>>()?;
        if train.is_empty() {
            return Err(Error::Invalid("training split is empty".into()));
        }
        Ok(TrainData { classes: index.classes.names().to_vec(), train, test })
    }

    /// Anchors fitted to the training boxes after resizing to `input`.
    pub fn fit_anchors(&self, input: usize, k: usize) -> Result<AnchorSet> {
        let sizes: Vec<(f64, f64)> = self
            .train
            .iter()
            .flat_map(|s| {
                let (sx, sy) = (input as f64 / s.width() as f64, input as f64 / s.height() as f64);
                s.boxes.iter().map(move |b| (b.bbox.w * sx, b.bbox.h * sy))
            })
            .collect();
        AnchorSet::new(input as f64, kmeans_anchors(&sizes, k, KMEANS_ITERS)?)
    }
}

/// Training data from an existing dataset directory, or from a freshly
/// generated synthetic one under `scratch` when `dir` is `None`. The split
/// uses `ratio` and `seed`.
pub fn prepare_data<T: Scalar>(
    dir: Option<&Path>,
    spec: &SynthSpec,
    scratch: &Path,
    ratio: f64,
    seed: u64,
) -> Result<TrainData<T>> {
    let index = match dir {
        Some(d) => DatasetIndex::scan(d)?,
        None => gen_synthetic(spec, scratch)?,
    };
    TrainData::load(&split_dataset(&index, ratio, seed)?)
}

/// One line of the metrics log.
#[derive(Clone, PartialEq, Debug)]
pub struct MetricRow {
    pub iteration: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    pub map: Option<f64>,
}

pub const METRICS_HEADER: &str = "iteration,lr,l_conf,l_ciou,l_cls,total,mAP";

pub fn write_metrics_csv<W: Write>(mut out: W, rows: &[MetricRow]) -> Result<()> {
    let io = |e| Error::io("<metrics>", e);
    writeln!(out, "{METRICS_HEADER}").map_err(io)?;
    for r in rows {
        let map = r.map.map_or(String::new(), |m| format!("{m:.6}"));
        writeln!(
            out,
            "{},{:e},{:.6},{:.6},{:.6},{:.6},{map}",
            r.iteration, r.lr, r.loss.l_conf, r.loss.l_ciou, r.loss.l_cls, r.loss.total
        )
        .map_err(io)?;
    }
    Ok(())
}

/// splitmix64 finalizer, for deriving independent per-sample seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sets the objectness bias of every head to the logit of `prior`, so an
/// untrained network starts out predicting mostly background.
pub fn init_head_priors<T: Scalar>(graph: &NetGraph, weights: &mut WeightStore<T>, prior: f64) -> Result<()> {
    let logit = (prior / (1.0 - prior)).ln();
    for (i, l) in graph.layers().iter().enumerate() {
        let LayerKind::YoloHead { classes } = l.kind else {
            continue;
        };
        let Source::Layer(src) = graph.sources(i)[0] else {
            continue;
        };
        let id = &graph.layers()[src].id;
        let Some(bias) = weights.get_mut(id).and_then(|p| p.bias.as_mut()) else {
            continue;
        };
        for a in 0..bias.len() / (classes + 5) {
            bias[a * (classes + 5) + 4] = T::lit(logit);
        }
    }
    Ok(())
}

/// Training state. `step` runs one optimizer iteration.
pub struct Trainer<'a, T: Scalar> {
    cfg: TrainConfig,
    data: &'a TrainData<T>,
    warm: NetGraph,
    last: NetGraph,
    weights: WeightStore<T>,
    state: SgdState<T>,
    anchors: AnchorSet,
    loss_cfg: LossConfig,
    iteration: usize,
    epoch: Option<(usize, Vec<usize>)>,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    /// `graph` supplies the topology; its activations are replaced according
    /// to the schedule. Fresh weights are drawn from `cfg.seed` when
    /// `weights` is `None`.
    pub fn new(
        graph: &NetGraph,
        data: &'a TrainData<T>,
        cfg: &TrainConfig,
        weights: Option<WeightStore<T>>,
    ) -> Result<Self> {
        cfg.validate()?;
        let weights = match weights {
            Some(w) => {
                w.check(graph)?;
                w
            }
            None => {
                let mut w = WeightStore::init(graph, cfg.seed)?;
                init_head_priors(graph, &mut w, OBJECTNESS_PRIOR)?;
                w
            }
        };
        let anchors = match &cfg.anchors {
            Some(a) => a.clone(),
            None => data.fit_anchors(cfg.input_size, 2 * crate::detection::ANCHORS_PER_HEAD)?,
        };
        Ok(Trainer {
            cfg: cfg.clone(),
            data,
            warm: graph.with_activation(cfg.warmup_act),
            last: graph.with_activation(cfg.final_act),
            state: SgdState::new(&weights),
            weights,
            anchors,
            loss_cfg: LossConfig::default(),
            iteration: 0,
            epoch: None,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn weights(&self) -> &WeightStore<T> {
        &self.weights
    }

    pub fn into_weights(self) -> WeightStore<T> {
        self.weights
    }

    pub fn anchors(&self) -> &AnchorSet {
        &self.anchors
    }

    /// Network as it runs at the current iteration.
    pub fn graph(&self) -> &NetGraph {
        self.graph_at(self.iteration)
    }

    fn graph_at(&self, iteration: usize) -> &NetGraph {
        if self.cfg.activation_at(iteration) == self.cfg.final_act {
            &self.last
        } else {
            &self.warm
        }
    }

    pub fn activation(&self) -> Activation {
        self.cfg.activation_at(self.iteration)
    }

    /// Training-set index of the `k`-th sample drawn (epoch-wise shuffles).
    fn draw(&mut self, k: usize) -> usize {
        let n = self.data.train.len();
        let e = k / n;
        if self.epoch.as_ref().is_none_or(|(cur, _)| *cur != e) {
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
            rng.set_stream(e as u64);
            order.shuffle(&mut rng);
            self.epoch = Some((e, order));
        }
        self.epoch.as_ref().expect("set above").1[k % n]
    }

    /// The augmented batch for the current iteration.
    pub fn next_batch(&mut self) -> Result<Vec<SoftSample<T>>> {
        let b = self.cfg.batch;
        let picks: Vec<usize> = (0..b).map(|j| self.draw(self.iteration * b + j)).collect();
        let size = (self.cfg.input_size, self.cfg.input_size);
        let aug = self.cfg.augment();
        let data = self.data;
        let pick = |i: usize| -> Result<SoftSample<T>> { Ok(data.train[i].clone()) };
        let base = mix(self.cfg.seed ^ mix(self.iteration as u64));
        picks
            .par_iter()
            .enumerate()
            .map(|(j, &i)| augment_sample(&pick, data.train.len(), i, size, &aug, mix(base ^ j as u64)))
            .collect()
    }

    /// One optimizer iteration on a freshly drawn batch.
    pub fn step(&mut self) -> Result<MetricRow> {
        let batch = self.next_batch()?;
        self.step_on(&batch)
    }

    /// One optimizer iteration on the given batch (already at input size):
    /// gradients of `subdivisions` micro-batches are averaged, batch-norm
    /// running statistics are updated once per micro-batch, then SGD steps.
    pub fn step_on(&mut self, batch: &[SoftSample<T>]) -> Result<MetricRow> {
        if batch.len() != self.cfg.batch {
            return Err(Error::Invalid(format!("batch of {} but config says {}", batch.len(), self.cfg.batch)));
        }
        let it = self.iteration;
        let lr = lr_schedule(it, &self.cfg);
        let subs = self.cfg.subdivisions;
        let inv = T::one() / T::from_count(subs);
        let mut acc = self.weights.zeros_like();
        let mut loss = LossBreakdown::default();
        for micro in batch.chunks(self.cfg.micro_batch()) {
            let images: Vec<Tensor<T>> = micro.iter().map(|s| s.image.clone()).collect();
            let x = Tensor::stack(&images)?;
            let s = x.shape();
            let truths: Vec<_> = micro.iter().map(|s| s.boxes.clone()).collect();
            let graph = self.graph_at(it);
            let pass = forward(graph, &self.weights, &x, ForwardOptions::train()).map_err(|e| match e {
                Error::Invalid(_) => Error::Diverged(it),
                other => other,
            })?;
            let heads: Vec<&Tensor<T>> = pass.heads.values().collect();
            let (part, grads) = total_loss(&heads, &truths, &self.anchors, (s.h, s.w), &self.loss_cfg, true)?;
            if !part.total.is_finite() {
                return Err(Error::Diverged(it));
            }
            let head_grads: IndexMap<String, Tensor<T>> =
                pass.heads.keys().cloned().zip(grads.expect("gradient requested")).collect();
            let g = backward_params(graph, &self.weights, &pass, &head_grads)?;
            accumulate_grads(&mut acc, &g.params, inv)?;
            self.weights.update_running_stats(&pass);
            let w = 1.0 / subs as f64;
            loss.l_conf += w * part.l_conf;
            loss.l_ciou += w * part.l_ciou;
            loss.l_cls += w * part.l_cls;
            loss.total += w * part.total;
            loss.lambda_cls = part.lambda_cls;
            loss.lambda_ciou = part.lambda_ciou;
        }
        let params = SgdParams { lr, momentum: self.cfg.momentum, decay: self.cfg.decay };
        sgd_step(&mut self.weights, &acc, &mut self.state, params)?;
        self.iteration += 1;
        Ok(MetricRow { iteration: it, lr, loss, map: None })
    }

    /// Detections on the held-out split, in original image coordinates.
    pub fn detect_test(&self, conf: f64) -> Result<Vec<DetectionRecord>> {
        let params = DetectParams { anchors: self.anchors.clone(), conf_threshold: conf, nms_iou: DEFAULT_NMS_IOU };
        let images: Vec<(String, &Tensor<T>)> = self.data.test.iter().map(|(n, s)| (n.clone(), &s.image)).collect();
        detect_images(self.graph(), &self.weights, &images, self.cfg.input_size, &params, &self.data.classes)
    }

    /// mAP@0.5 on the held-out split with the current weights.
    pub fn evaluate(&self) -> Result<EvalReport> {
        let dets = self.detect_test(EVAL_CONF)?;
        evaluate(&dets, &ground_truth(&self.data.test), &self.data.classes, 0.5, ApMode::AllPoint)
    }
}

pub fn ground_truth<T: Scalar>(samples: &[(String, SoftSample<T>)]) -> Vec<GroundTruth> {
    samples
        .iter()
        .flat_map(|(name, s)| {
            s.boxes.iter().map(move |b| GroundTruth { image: name.clone(), class_id: b.class_id(), bbox: b.bbox })
        })
        .collect()
}

/// Result of [`train_loop`].
#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Scalar> {
    pub weights: WeightStore<T>,
    /// The network with the activation in force when training stopped.
    pub graph: NetGraph,
    pub anchors: AnchorSet,
    pub metrics: Vec<MetricRow>,
    pub report: Option<EvalReport>,
    pub iterations: usize,
}

impl<T: Scalar> TrainOutcome<T> {
    /// Writes `weights.btpw`, `graph.net`, `anchors.txt`, `metrics.csv` and,
    /// when there was an evaluation, `report.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, bytes: &[u8]| -> Result<()> {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
        };
        write("weights.btpw", &self.weights.to_bytes())?;
        write("graph.net", self.graph.to_text().as_bytes())?;
        write("anchors.txt", format!("{}\n", self.anchors).as_bytes())?;
        let mut csv = Vec::new();
        write_metrics_csv(&mut csv, &self.metrics)?;
        write("metrics.csv", &csv)?;
        if let Some(r) = &self.report {
            write("report.json", serde_json::to_string_pretty(r)?.as_bytes())?;
        }
        Ok(())
    }

    pub fn best_map(&self) -> Option<f64> {
        self.metrics.iter().filter_map(|r| r.map).reduce(f64::max)
    }

    pub fn final_map(&self) -> Option<f64> {
        self.report.as_ref().map(|r| r.map)
    }
}

/// Full run: steps until `max_iter` (or until an evaluation reaches
/// `target_map`), evaluating every `eval_every` iterations and at the end.
/// `observe` sees every metrics row as it is produced.
pub fn train_loop<T: Scalar>(
    graph: &NetGraph,
    data: &TrainData<T>,
    cfg: &TrainConfig,
    observe: &mut dyn FnMut(&MetricRow),
) -> Result<TrainOutcome<T>> {
    let mut trainer = Trainer::new(graph, data, cfg, None)?;
    let mut metrics = Vec::with_capacity(cfg.max_iter);
    let mut report = None;
    while trainer.iteration() < cfg.max_iter {
        let mut row = trainer.step()?;
        let done = trainer.iteration();
        let due = cfg.eval_every > 0 && done % cfg.eval_every == 0;
        if (due || done == cfg.max_iter) && !data.test.is_empty() {
            let r = trainer.evaluate()?;
            row.map = Some(r.map);
            let hit = cfg.target_map.is_some_and(|t| r.map >= t);
            report = Some(r);
            observe(&row);
            metrics.push(row);
            if hit {
                break;
            }
            continue;
        }
        observe(&row);
        metrics.push(row);
    }
    let iterations = trainer.iteration();
    let anchors = trainer.anchors().clone();
    let graph = trainer.graph().clone();
    Ok(TrainOutcome { weights: trainer.into_weights(), graph, anchors, metrics, report, iterations })
}
