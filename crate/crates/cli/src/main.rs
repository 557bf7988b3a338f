//! `btp`: model analysis, detection, evaluation, augmentation preview,
//! synthetic data and toy training from the command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use btp_core::augment::{augment_from_dataset, AugmentConfig};
use btp_core::data::{image_files, load_ppm, save_ppm, write_voc, Annotation, DatasetIndex};
use btp_core::detection::{
    detect_images, read_jsonl, write_jsonl, AnchorSet, DetectParams, DEFAULT_CONF, DEFAULT_NMS_IOU,
};
use btp_core::eval::{dataset_ground_truth, evaluate, pr_curve_svg, ApMode, DEFAULT_MATCH_IOU};
use btp_core::model::{resolve_graph, WeightStore};
use btp_core::train::{
    ablation_table, gen_synthetic, prepare_data, run_ablation, train_loop, AblationMatrix, SynthSpec, TrainConfig,
};
use btp_core::{NetGraph, Tensor};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "btp", version, about = "Lightweight two-head detector toolkit")]
struct Cli {
    /// Worker threads; 1 gives fully deterministic single-threaded runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for every stochastic step of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct GraphArg {
    /// `reference`, `toy`, or a graph description file.
    #[arg(long, default_value = "reference")]
    graph: String,
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer FLOPs table and total BFLOPS.
    Flops {
        #[command(flatten)]
        graph: GraphArg,
        #[arg(long, default_value_t = 512)]
        size: usize,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter count and weight size.
    Params {
        #[command(flatten)]
        graph: GraphArg,
    },
    /// Writes a network description file (stdout without --out).
    Export {
        #[command(flatten)]
        graph: GraphArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs the detector and writes JSON-lines detections.
    Detect {
        #[command(flatten)]
        graph: GraphArg,
        #[arg(long)]
        weights: PathBuf,
        /// A PPM file, a directory of them, or a dataset directory.
        #[arg(long)]
        images: PathBuf,
        #[arg(long, default_value_t = 512)]
        size: usize,
        #[arg(long, default_value_t = DEFAULT_CONF)]
        conf: f64,
        #[arg(long = "nms-iou", default_value_t = DEFAULT_NMS_IOU)]
        nms_iou: f64,
        /// Anchor text (`@512 16,16 ...`) or a file holding it.
        #[arg(long)]
        anchors: Option<String>,
        /// classes.txt naming the classes (defaults to numeric names).
        #[arg(long)]
        classes: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scores detections against a dataset directory.
    Eval {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        voc: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MATCH_IOU)]
        iou: f64,
        /// Use 11-point interpolated AP instead of all-point.
        #[arg(long)]
        eleven_point: bool,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for one SVG precision/recall plot per class.
        #[arg(long)]
        plots: Option<PathBuf>,
    },
    /// Writes one augmented sample as PPM plus VOC XML.
    Augment {
        #[arg(long)]
        voc: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long)]
        mixup: bool,
        #[arg(long)]
        cutmix: bool,
        #[arg(long)]
        mosaic: bool,
        /// Disable crop/stretch/flip/translate.
        #[arg(long)]
        no_geometric: bool,
        /// Chance that each enabled mixing operation fires.
        #[arg(long, default_value_t = 1.0)]
        prob: f64,
        /// Output stem; `.ppm` and `.xml` are appended.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generates the synthetic shapes dataset.
    Synth {
        #[arg(long, default_value_t = 240)]
        num_images: usize,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains the toy network and writes weights, anchors and metrics.
    TrainToy {
        /// Key = value training config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory; synthetic shapes are generated when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Override the config's iteration count.
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains every row of an ablation matrix and prints the comparison table.
    Ablate {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only write one train config per row (row1.cfg, ...) into --out.
        #[arg(long)]
        emit_configs: bool,
    },
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<btp_core::Error> for Failure {
    fn from(e: btp_core::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn anchors_arg(arg: Option<&str>) -> CliResult<AnchorSet> {
    let Some(a) = arg else {
        return Ok(AnchorSet::default());
    };
    let text = if Path::new(a).is_file() { read_text(Path::new(a))? } else { a.to_string() };
    Ok(text.trim().parse()?)
}

fn graph_arg(g: &GraphArg) -> CliResult<NetGraph> {
    Ok(resolve_graph(&g.graph)?)
}

fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let seed = cli.seed;
    match cli.cmd {
        Command::Flops { graph, size, out } => {
            let report = graph_arg(&graph)?.count_flops((size, size))?;
            print!("{}", report.to_table());
            if let Some(p) = out {
                let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Data(e.to_string()))?;
                write_file(&p, json.as_bytes())?;
            }
        }
        Command::Params { graph } => {
            let n = graph_arg(&graph)?.count_params()?;
            println!("{n} parameters ({:.2} MB as f32)", n as f64 * 4.0 / 1e6);
        }
        Command::Export { graph, out } => {
            let text = graph_arg(&graph)?.to_text();
            match out {
                Some(p) => write_file(&p, text.as_bytes())?,
                None => print!("{text}"),
            }
        }
        Command::Detect { graph, weights, images, size, conf, nms_iou, anchors, classes, out } => {
            if size == 0 || size % 32 != 0 {
                return Err(Failure::Usage(format!("--size {size} must be a positive multiple of 32")));
            }
            let g = graph_arg(&graph)?;
            let w = WeightStore::<f32>::load_for(&weights, &g)?;
            let names: Vec<String> = match classes {
                Some(p) => btp_core::data::ClassRegistry::parse(&read_text(&p)?)?.names().to_vec(),
                None => (0..g.num_classes().unwrap_or(0)).map(|c| c.to_string()).collect(),
            };
            let files = image_files(&images)?;
            let loaded: Vec<(String, Tensor<f32>)> = files
                .iter()
                .map(|p| {
                    let name = p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
                    load_ppm(p).map(|t| (name, t))
                })
                .collect::<Result<_, _>>()?;
            let refs: Vec<(String, &Tensor<f32>)> = loaded.iter().map(|(n, t)| (n.clone(), t)).collect();
            let params = DetectParams { anchors: anchors_arg(anchors.as_deref())?, conf_threshold: conf, nms_iou };
            let recs = detect_images(&g, &w, &refs, size, &params, &names)?;
            let mut buf = Vec::new();
            write_jsonl(&mut buf, &recs)?;
            write_file(&out, &buf)?;
            println!("{} detections in {} images -> {}", recs.len(), loaded.len(), out.display());
        }
        Command::Eval { dets, voc, iou, eleven_point, out, plots } => {
            let index = DatasetIndex::scan(&voc)?;
            let recs = read_jsonl(&read_text(&dets)?)?;
            let mode = if eleven_point { ApMode::ElevenPoint } else { ApMode::AllPoint };
            let report = evaluate(&recs, &dataset_ground_truth(&index)?, index.classes.names(), iou, mode)?;
            for c in &report.classes {
                let ap = c.ap.map_or("-".to_string(), |a| format!("{:.4}", a));
                println!("{:<20} AP {ap} ({} truths, {} detections)", c.name, c.num_truths, c.num_detections);
            }
            println!("mAP@{iou} {:.4}  average IoU {:.4}", report.map, report.average_iou);
            if let Some(p) = out {
                let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Data(e.to_string()))?;
                write_file(&p, json.as_bytes())?;
            }
            if let Some(dir) = plots {
                for c in &report.classes {
                    let svg = pr_curve_svg(&c.curve, &c.name);
                    write_file(&dir.join(format!("pr_{}.svg", c.name)), svg.as_bytes())?;
                }
            }
        }
        Command::Augment { voc, index, size, mixup, cutmix, mosaic, no_geometric, prob, out } => {
            if !(0.0..=1.0).contains(&prob) {
                return Err(Failure::Usage(format!("--prob {prob} outside [0, 1]")));
            }
            let ds = DatasetIndex::scan(&voc)?;
            let cfg =
                AugmentConfig { geometric: !no_geometric, mixup, cutmix, mosaic, prob, ..AugmentConfig::default() };
            let s = augment_from_dataset::<f32>(&ds, index, (size, size), &cfg, seed.unwrap_or(0))?;
            let stem = out.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            let img_path = out.with_file_name(format!("{stem}.ppm"));
            let xml_path = out.with_file_name(format!("{stem}.xml"));
            if let Some(dir) = img_path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            }
            save_ppm(&s.image, &img_path)?;
            let mut ann = Annotation::new(format!("{stem}.ppm"), size, size);
            ann.objects = ds.classes.objects(&s.boxes);
            write_file(&xml_path, write_voc(&ann).as_bytes())?;
            println!("{} boxes, lambda {:.4} -> {}", s.boxes.len(), s.lambda, img_path.display());
        }
        Command::Synth { num_images, size, out } => {
            let spec = SynthSpec::square(num_images, size, seed.unwrap_or(0));
            let idx = gen_synthetic(&spec, &out)?;
            println!("{} images -> {}", idx.len(), out.display());
        }
        Command::TrainToy { config, data, max_iter, out } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::parse(&read_text(&p)?)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = max_iter {
                cfg.max_iter = m;
            }
            cfg.validate()?;
            let spec = SynthSpec::square(SynthSpec::default().num_images, cfg.input_size, cfg.seed);
            let td = prepare_data::<f32>(data.as_deref(), &spec, &out.join("data"), cfg.train_ratio, cfg.seed)?;
            let graph = cfg.build_graph(td.classes.len())?;
            let outcome = train_loop(&graph, &td, &cfg, &mut |r| {
                if let Some(m) = r.map {
                    println!("iteration {:5}  loss {:.4}  mAP@0.5 {:.4}", r.iteration + 1, r.loss.total, m);
                }
            })?;
            outcome.save(&out)?;
            let map = outcome.final_map().map_or("n/a".to_string(), |m| format!("{m:.4}"));
            println!("{} iterations, held-out mAP@0.5 {map} -> {}", outcome.iterations, out.display());
        }
        Command::Ablate { matrix, out, emit_configs } => {
            let mut m = AblationMatrix::parse(&read_text(&matrix)?)?;
            if let Some(s) = seed {
                m.seeds = vec![s];
            }
            if emit_configs {
                let seed = m.seeds.first().copied().unwrap_or(0);
                for (i, row) in m.rows.iter().enumerate() {
                    let text = format!(
                        "# Row {} of {}: mixup={} cutmix={} mosaic={} activation={} bn={}\n\
                         # Trained on the [synth] dataset of that matrix.\n{}",
                        i + 1,
                        matrix.display(),
                        row.mixup,
                        row.cutmix,
                        row.mosaic,
                        row.activation.name(),
                        row.bn,
                        m.config(i, seed).to_text()
                    );
                    write_file(&out.join(format!("row{}.cfg", i + 1)), text.as_bytes())?;
                }
                println!("wrote {} configs to {}", m.rows.len(), out.display());
                return Ok(());
            }
            let td = prepare_data::<f32>(None, &m.synth, &out.join("data"), m.base.train_ratio, m.synth.seed)?;
            let results = run_ablation(&m, &td, &mut |r| {
                let map = r.map.as_ref().map_or_else(|e| format!("failed: {e}"), |v| format!("{v:.4}"));
                println!("row {} seed {}: mAP@0.5 {map}", r.row + 1, r.seed);
            })?;
            let table = ablation_table(&m, &results);
            let mut csv = String::from("row,seed,iterations,map\n");
            for r in &results {
                let map = r.map.as_ref().map_or(String::new(), |v| format!("{v:.6}"));
                csv.push_str(&format!("{},{},{},{map}\n", r.row + 1, r.seed, r.iterations));
            }
            write_file(&out.join("table.md"), table.as_bytes())?;
            write_file(&out.join("results.csv"), csv.as_bytes())?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
