//! End-to-end runs of the `btp` binary: exit codes, file formats, and the
//! wiring from synthetic data through training, detection and evaluation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use btp_core::data::{parse_voc, CLASSES_FILE};
use btp_core::graph::parse_graph;
use btp_core::model::build_reference_btp;
use serde_json::Value;

fn btp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_btp")).args(args).output().expect("spawn btp")
}

fn ok(args: &[&str]) -> String {
    let out = btp(args);
    assert!(out.status.success(), "btp {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn flops_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("flops.json");
    let table = ok(&["flops", "--graph", "reference", "--size", "512", "--out", s(&json)]);
    let report: Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    let lib = build_reference_btp(84).unwrap().count_flops((512, 512)).unwrap();
    assert_eq!(report["total_flops"].as_u64(), Some(lib.total_flops));
    assert_eq!(report["params"].as_u64(), Some(lib.params));
    assert!(table.contains(&lib.total_flops.to_string()));
    let params = ok(&["params", "--graph", "reference"]);
    assert!(params.starts_with(&format!("{} parameters", lib.params)));
}

#[test]
fn export_reproduces_the_shipped_reference() {
    let text = ok(&["export", "--graph", "reference"]);
    let shipped = fs::read_to_string(repo().join("configs/reference.net")).unwrap();
    assert_eq!(parse_graph(&text).unwrap().to_text(), parse_graph(&shipped).unwrap().to_text());
    let toy = fs::read_to_string(repo().join("configs/toy.net")).unwrap();
    assert_eq!(ok(&["export", "--graph", "toy"]), parse_graph(&toy).unwrap().to_text());
}

#[test]
fn exit_codes_separate_usage_from_data_errors() {
    assert_eq!(btp(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(btp(&["flops", "--size"]).status.code(), Some(1));
    assert_eq!(btp(&["--threads", "0", "params"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    let out = btp(&["eval", "--dets", s(&missing), "--voc", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    assert_eq!(btp(&["flops", "--graph", s(&missing)]).status.code(), Some(2));
}

#[test]
fn emitted_ablation_configs_match_the_shipped_ones() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = repo().join("configs/table2.toml");
    let said = ok(&["ablate", "--matrix", s(&matrix), "--out", s(dir.path()), "--emit-configs"]);
    assert!(said.starts_with("wrote 9 configs"));
    // The first comment line names the matrix path, which depends on the caller.
    let body = |p: PathBuf| fs::read_to_string(p).unwrap().lines().skip(1).collect::<Vec<_>>().join("\n");
    for i in 1..=9 {
        let name = format!("row{i}.cfg");
        assert_eq!(body(dir.path().join(&name)), body(repo().join("configs/table2").join(&name)), "{name}");
    }
}

#[test]
fn synth_train_detect_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("tiny.cfg");
    fs::write(&cfg, "model = toy\ninput_size = 64\nbatch = 4\nmax_iter = 3\nburn_in = 1\nsteps = 2\neval_every = 0\n")
        .unwrap();
    let run = root.join("run");
    let said = ok(&["--threads", "1", "train-toy", "--config", s(&cfg), "--out", s(&run)]);
    assert!(said.contains("3 iterations"), "{said}");
    for f in ["weights.btpw", "graph.net", "anchors.txt", "metrics.csv", "report.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);

    let data = run.join("data");
    let detect = |out: &Path| {
        ok(&[
            "--threads",
            "1",
            "detect",
            "--graph",
            s(&run.join("graph.net")),
            "--weights",
            s(&run.join("weights.btpw")),
            "--anchors",
            s(&run.join("anchors.txt")),
            "--classes",
            s(&data.join(CLASSES_FILE)),
            "--images",
            s(&data),
            "--size",
            "64",
            "--conf",
            "0.001",
            "--out",
            s(out),
        ])
    };
    let (d1, d2) = (root.join("d1.jsonl"), root.join("d2.jsonl"));
    detect(&d1);
    detect(&d2);
    assert_eq!(fs::read(&d1).unwrap(), fs::read(&d2).unwrap());

    let report = root.join("report.json");
    let plots = root.join("plots");
    let printed = ok(&["eval", "--dets", s(&d1), "--voc", s(&data), "--out", s(&report), "--plots", s(&plots)]);
    assert!(printed.contains("mAP@0.5"));
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let map = r["map"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&map));
    assert_eq!(fs::read_dir(&plots).unwrap().count(), 2);

    let aug = root.join("aug/sample");
    let said =
        ok(&["--seed", "5", "augment", "--voc", s(&data), "--size", "64", "--mixup", "--mosaic", "--out", s(&aug)]);
    assert!(said.contains("boxes"));
    let ann = parse_voc(&fs::read_to_string(root.join("aug/sample.xml")).unwrap()).unwrap();
    assert_eq!((ann.width, ann.height), (64, 64));
    let first = fs::read(root.join("aug/sample.ppm")).unwrap();
    ok(&["--seed", "5", "augment", "--voc", s(&data), "--size", "64", "--mixup", "--mosaic", "--out", s(&aug)]);
    assert_eq!(fs::read(root.join("aug/sample.ppm")).unwrap(), first);
}

#[test]
fn synth_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let gen = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&["--seed", seed, "synth", "--num-images", "3", "--size", "64", "--out", s(&out)]);
        let mut files: Vec<PathBuf> =
            fs::read_dir(out.join("Annotations")).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        files.iter().map(|p| fs::read_to_string(p).unwrap()).collect::<Vec<_>>()
    };
    let a = gen("a", "1");
    assert_eq!(a.len(), 3);
    assert_eq!(a, gen("b", "1"));
    assert_ne!(a, gen("c", "2"));
}
