//! End-to-end runs of the `imore` binary on a tiny generated dataset.

use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
motions = 24

[synth]
segments_per_seq = 4
min_segment_frames = 16
max_segment_frames = 16

[synth.vocab]
actions = ["walk", "step", "raise_arm", "wave", "kick", "squat", "nod", "jump"]
directions = ["left", "right", "forward", "backward", "up", "down"]
body_parts = ["left_arm", "right_arm", "left_hand", "right_hand", "left_leg", "right_leg", "left_foot", "right_foot", "torso", "head"]

[dataset]
per_type_quota = 30

[train]
epochs = 2
lr = 0.003
batch_size = 8

[train.model]
d = 8
blocks = 1
heads = 1
levels = [0, "final"]
dropout = 0.0
"#;

fn imore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imore")).args(args).env_remove("IMORE_SEED").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = imore(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: std::path::PathBuf,
}

impl Fixture {
    fn new() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        std::fs::write(root.join("run.toml"), TINY).unwrap();
        Fixture { _dir: dir, root }
    }

    fn p(&self, name: &str) -> std::path::PathBuf {
        self.root.join(name)
    }

    fn gen(&self) -> std::path::PathBuf {
        let data = self.p("data");
        ok(&["gen", "--config", s(&self.p("run.toml")), "--seed", "4", "--out", s(&data), "--workers", "2"]);
        data
    }

    fn train(&self, data: &Path, name: &str) -> std::path::PathBuf {
        let ckpt = self.p(name);
        ok(&["train", "--data", s(data), "--config", s(&self.p("run.toml")), "--out-ckpt", s(&ckpt), "--seed", "1"]);
        ckpt
    }
}

#[test]
fn generated_data_passes_the_oracle_check() {
    let f = Fixture::new();
    let data = f.gen();
    let out = ok(&["oracle", "--data", s(&data)]);
    assert!(out.contains("match the symbolic oracle"), "{out}");
    assert!(data.join("run_config.toml").is_file());

    let dataset = data.join("dataset.jsonl");
    let text = std::fs::read_to_string(&dataset).unwrap();
    let first = text.lines().next().unwrap();
    let mut record: serde_json::Value = serde_json::from_str(first).unwrap();
    let answer = record["answer"].as_str().unwrap().to_string();
    let labels = json(&data.join("manifest.json"))["answer_labels"][record["question_type"].as_str().unwrap()].clone();
    let other = labels.as_array().unwrap().iter().map(|l| l.as_str().unwrap()).find(|l| *l != answer).unwrap().to_string();
    record["answer"] = other.into();
    std::fs::write(&dataset, text.replacen(first, &record.to_string(), 1)).unwrap();
    assert_eq!(code(&imore(&["oracle", "--data", s(&data)])), 5);
}

#[test]
fn generation_is_seed_reproducible_and_honours_the_environment() {
    let f = Fixture::new();
    let a = f.gen();
    let b = f.p("env");
    let out = Command::new(env!("CARGO_BIN_EXE_imore"))
        .args(["gen", "--config", s(&f.p("run.toml")), "--out", s(&b)])
        .env("IMORE_SEED", "4")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(a.join("dataset.jsonl")).unwrap(), std::fs::read(b.join("dataset.jsonl")).unwrap());
    let c = f.p("other");
    ok(&["gen", "--config", s(&f.p("run.toml")), "--seed", "5", "--out", s(&c)]);
    assert_ne!(std::fs::read(a.join("dataset.jsonl")).unwrap(), std::fs::read(c.join("dataset.jsonl")).unwrap());
}

#[test]
fn train_eval_and_trace_round_trip() {
    let f = Fixture::new();
    let data = f.gen();
    let ckpt = f.train(&data, "model.ckpt");
    let curve = std::fs::read_to_string(f.p("model.ckpt.curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);

    let gold = f.p("gold");
    ok(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--report", s(&gold), "--workers", "2"]);
    let zero = f.p("zero");
    ok(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--programs", "corrupted:0", "--report", s(&zero)]);
    let (g, z) = (json(&gold.join("report.json")), json(&zero.join("report.json")));
    for key in ["predictions", "cells", "confusion", "accuracy", "total", "correct"] {
        assert_eq!(g[key], z[key], "{key}");
    }
    assert_eq!(g["programs"], "gold");
    assert_eq!(z["programs"], "corrupted:0");
    assert!(gold.join("majority.tsv").is_file());
    assert!(std::fs::read_to_string(gold.join("report.tsv")).unwrap().starts_with("query_action/All"));

    let manifest = std::fs::read_to_string(data.join("dataset.jsonl")).unwrap();
    let id = manifest
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .find(|r| r["program"].as_str().unwrap().contains("filter_action"))
        .map(|r| r["id"].as_str().unwrap().to_string())
        .unwrap();
    let out = f.p("trace");
    ok(&["trace", "--ckpt", s(&ckpt), "--data", s(&data), "--example-id", &id, "--out", s(&out)]);
    let t = json(&out.join("trace.json"));
    let steps = t["memory"]["steps"].as_array().unwrap();
    let filter = steps.iter().find(|st| st["func"] == "filter_action").unwrap();
    let mass: f64 = filter["position_weights"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|l| l.as_array().unwrap().iter().map(|w| w.as_f64().unwrap()))
        .sum();
    assert!((mass - 1.0).abs() < 1e-6, "{mass}");
    for row in t["concept_localization"].as_array().unwrap() {
        let total: f64 = row.as_array().unwrap().iter().map(|w| w.as_f64().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }
    assert!(out.join("trace.txt").is_file());
}

#[test]
fn gradcheck_passes_at_small_dims() {
    let out = ok(&["gradcheck", "--dims", "d=8,blocks=1", "--samples", "4"]);
    assert!(out.contains("PASS"), "{out}");
}

#[test]
fn errors_have_distinct_exit_codes() {
    let f = Fixture::new();
    assert_eq!(code(&imore(&["train"])), 2);
    assert_eq!(code(&imore(&["eval", "--ckpt", "x", "--data", "y", "--report", "z", "--mode", "III"])), 2);

    std::fs::write(f.p("bad.toml"), "motions = 4\nlearning_rate = 1\n").unwrap();
    assert_eq!(code(&imore(&["gen", "--config", s(&f.p("bad.toml")), "--out", s(&f.p("d"))])), 3);
    std::fs::write(f.p("lr.toml"), "[train]\nlr = -1.0\n").unwrap();
    let missing = f.p("missing");
    assert_eq!(code(&imore(&["train", "--data", s(&missing), "--config", s(&f.p("lr.toml")), "--out-ckpt", "c"])), 3);
    assert_eq!(code(&imore(&["train", "--data", s(&missing), "--out-ckpt", s(&f.p("c"))])), 4);
    assert_eq!(code(&imore(&["gradcheck", "--dims", "depth=3"])), 3);

    let data = f.gen();
    std::fs::write(f.p("boom.toml"), "[train]\nepochs = 1\n[train.model]\nd = 8\nblocks = 1\nlevels = [0, \"final\"]\ninput_scale = 1e39\n").unwrap();
    let out = imore(&["train", "--data", s(&data), "--config", s(&f.p("boom.toml")), "--out-ckpt", s(&f.p("boom.ckpt"))]);
    assert_eq!(code(&out), 6, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!f.p("boom.ckpt").exists());
}
