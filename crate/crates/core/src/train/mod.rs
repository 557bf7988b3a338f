//! Toy-scale training: configuration, SGD, the training loop, a synthetic
//! shapes dataset and the augmentation/activation ablation harness.

mod ablate;
mod config;
mod optim;
mod run;
mod synth;

pub use ablate::{ablation_table, run_ablation, AblationMatrix, AblationResult, AblationRow};
pub use config::{ModelKind, TrainConfig};
pub use optim::{accumulate_grads, lr_schedule, sgd_step, SgdParams, SgdState};
pub use run::{
    ground_truth, init_head_priors, prepare_data, train_loop, write_metrics_csv, MetricRow, TrainData, TrainOutcome,
    Trainer, EVAL_CONF, METRICS_HEADER, OBJECTNESS_PRIOR,
};
pub use synth::{gen_synthetic, render_synthetic, SynthImage, SynthObject, SynthSpec, SHAPE_GAP, SYNTH_CLASSES};
