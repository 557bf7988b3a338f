//! Synthetic-shapes training run. Extra `key=value` arguments override the
//! training config, e.g. `train_toy max_iter=600 lr0=0.01`.

use btp_core::data::split_dataset;
use btp_core::train::{gen_synthetic, train_loop, SynthSpec, TrainConfig, TrainData};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = TrainConfig { target_map: Some(0.8), ..Default::default() };
    let mut spec = SynthSpec::default();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').ok_or("expected key=value")?;
        match k {
            "images" => spec.num_images = v.parse()?,
            "size" => {
                spec.width = v.parse()?;
                spec.height = spec.width;
            }
            "min_size" => spec.min_size = v.parse()?,
            "max_size" => spec.max_size = v.parse()?,
            _ => cfg.set(0, k, v)?,
        }
    }
    cfg.validate()?;
    let dir = tempfile::tempdir()?;
    let index = gen_synthetic(&spec, dir.path())?;
    let index = split_dataset(&index, cfg.train_ratio, spec.seed)?;
    let data: TrainData<f32> = TrainData::load(&index)?;
    let graph = cfg.build_graph(data.classes.len())?;
    let start = std::time::Instant::now();
    let out = train_loop(&graph, &data, &cfg, &mut |r| {
        if r.iteration % 25 == 0 || r.map.is_some() {
            println!(
                "{:5} lr {:.2e} conf {:.4} ciou {:.4} cls {:.4} total {:.4} {} ({:.0}s)",
                r.iteration,
                r.lr,
                r.loss.l_conf,
                r.loss.l_ciou,
                r.loss.l_cls,
                r.loss.total,
                r.map.map_or(String::new(), |m| format!("mAP {m:.4}")),
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    println!("iterations {} final mAP {:?} anchors {}", out.iterations, out.final_map(), out.anchors);
    Ok(())
}
