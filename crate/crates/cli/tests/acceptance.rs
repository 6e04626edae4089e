//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N: PASS|FAIL ...` line. Every tolerance is a constant below.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use imore::dataset::{generate_dataset, DatasetManifest, GenConfig, Split};
use imore::diff::{GradCheckConfig, Graph, Init};
use imore::dsl::{parse_program, random_program, QuestionType, TemplateCell, TemplateSet};
use imore::model::{ImoreModel, LevelId, ModelConfig, RunScore};
use imore::motion::{generate_sequence, MotionSequence, SynthConfig};
use imore::oracle::execute;
use imore::train::{
    build_model, evaluate, explicit_baseline, majority_baseline, median, train, AblationVariant, EvalOptions,
    ProgramSource, TrainConfig,
};
use imore::vocab::ConceptVocabulary;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const C1_PROGRAMS: u64 = 1000;
const C1_TIME: Duration = Duration::from_secs(5);
const C2_MIN_EXAMPLES: usize = 500;
const C2_MAX_SEGMENTS: usize = 6;
const C2_TIME: Duration = Duration::from_secs(30);
const C3_TOL: f64 = 1e-4;
const C3_D: usize = 16;
const C3_MAX_STEPS: usize = 4;
const C3_MAX_LEVELS: usize = 3;
const C3_TIME: Duration = Duration::from_secs(300);
const C4_FORWARDS: u64 = 100;
const C4_TOL: f64 = 1e-6;
const C5_MIN_ACCURACY: f64 = 0.85;
const C5_MAX_MAJORITY: f64 = 0.35;
const C5_TIME: Duration = Duration::from_secs(20 * 60);
const C6_MARGIN: f64 = 0.01;
const C7_RATE: f64 = 0.1;
const C8_EXAMPLES: usize = 50;
const C10_MOTIONS: u64 = 20;
const SEEDS: [u64; 3] = [0, 1, 2];

fn report(n: usize, pass: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

fn synth(segments: usize, frames: usize) -> SynthConfig {
    SynthConfig {
        segments_per_seq: segments,
        min_segment_frames: frames,
        max_segment_frames: frames,
        vocab: ConceptVocabulary::compact(),
        ..SynthConfig::default()
    }
}

fn motions(count: usize, seed: u64, cfg: &SynthConfig) -> Vec<MotionSequence> {
    (0..count)
        .map(|i| {
            let mut m = generate_sequence(seed * 1_000_003 + i as u64, cfg).unwrap();
            m.id = format!("m{i:05}");
            m
        })
        .collect()
}

fn by_id(motions: Vec<MotionSequence>) -> HashMap<String, MotionSequence> {
    motions.into_iter().map(|m| (m.id.clone(), m)).collect()
}

/// A model small enough for exhaustive checks, built over a compact dataset.
fn small_setup(seed: u64) -> (DatasetManifest, HashMap<String, MotionSequence>, TrainConfig) {
    let ms = motions(24, seed, &synth(4, 16));
    let manifest = generate_dataset(&ms, seed, &GenConfig { per_type_quota: 30, ..GenConfig::default() }).unwrap();
    let model = ModelConfig {
        window: 16,
        patch: 4,
        d: C3_D,
        blocks: 2,
        heads: 2,
        levels: vec![LevelId::Block(0), LevelId::Block(1), LevelId::Final],
        dropout: 0.0,
        ..ModelConfig::default()
    };
    (manifest, by_id(ms), TrainConfig { seed, model, ..TrainConfig::default() })
}

#[test]
fn criterion_01_parser_round_trip() {
    let vocab = ConceptVocabulary::full();
    let mut templates = TemplateSet::default();
    templates.cells.extend(QuestionType::ALL.map(|qtype| TemplateCell { qtype, relation: None }));
    let t = Instant::now();
    let mut ok = 0;
    for seed in 0..C1_PROGRAMS {
        let p = random_program(seed, &vocab, &templates).unwrap();
        let text = p.to_text();
        if parse_program(&text, &vocab).is_ok_and(|back| back == p && back.to_text() == text) {
            ok += 1;
        }
    }
    let elapsed = t.elapsed();
    report(1, ok == C1_PROGRAMS && elapsed < C1_TIME, format!("{ok}/{C1_PROGRAMS} round trips in {elapsed:.2?}"));
}

#[test]
fn criterion_02_symbolic_oracle() {
    let t = Instant::now();
    let ms = motions(200, 2, &synth(C2_MAX_SEGMENTS, 12));
    let manifest = generate_dataset(&ms, 2, &GenConfig { per_type_quota: 250, ..GenConfig::default() }).unwrap();
    let map = by_id(ms);
    let violations = manifest.violations(&map);
    let mut brute = 0;
    for e in &manifest.examples {
        let m = &map[&e.motion_id];
        assert!(m.segments.len() <= C2_MAX_SEGMENTS);
        let oracle = execute(m, &e.program).ok().map(|c| c.label);
        let enumerated = support::brute_force_answer(m, e.program.root());
        if oracle.as_deref() == Some(e.answer.label.as_str()) && enumerated == oracle {
            brute += 1;
        }
    }
    let n = manifest.examples.len();
    let elapsed = t.elapsed();
    report(
        2,
        n >= C2_MIN_EXAMPLES && violations.is_empty() && brute == n && elapsed < C2_TIME,
        format!("{n} examples, {} stored-answer mismatches, {brute}/{n} agree with enumeration, {elapsed:.2?}", violations.len()),
    );
}

#[test]
fn criterion_03_gradient_check() {
    let t = Instant::now();
    let (manifest, map, cfg) = small_setup(3);
    let model = build_model::<f64>(&manifest, &cfg).unwrap();
    let levels = model.config.pool_levels().len();
    let example = manifest
        .split(Split::Train)
        .filter(|e| e.program.len() <= C3_MAX_STEPS)
        .max_by_key(|e| e.program.len())
        .unwrap();
    let windows = model.mode_i_windows(&map[&example.motion_id]).unwrap();
    let check = GradCheckConfig { tol: C3_TOL, samples_per_tensor: 32, seed: 3, ..GradCheckConfig::default() };
    let r = model.grad_check(&windows, &example.question, &example.program, &example.answer.label, check).unwrap();
    let elapsed = t.elapsed();
    let reached = r.tensors.iter().filter(|t| t.reached).count();
    report(
        3,
        r.passed() && r.tensors.len() == model.params.len() && levels <= C3_MAX_LEVELS && elapsed < C3_TIME,
        format!(
            "d={C3_D}, {} steps, {levels} levels, {} tensors ({reached} on the answer path), max rel err {:.2e} (tol {C3_TOL:e}), {elapsed:.2?}",
            example.program.len(),
            r.tensors.len(),
            r.max_rel_err()
        ),
    );
}

#[test]
fn criterion_04_attention_rows_are_distributions() {
    let (manifest, map, cfg) = small_setup(4);
    let model = build_model::<f64>(&manifest, &cfg).unwrap();
    let examples: Vec<_> = manifest.examples.iter().collect();
    let (mut rows, mut worst) = (0usize, 0.0f64);
    let mut check = |sum: f64| {
        rows += 1;
        worst = worst.max((sum - 1.0).abs());
    };
    for i in 0..C4_FORWARDS {
        let e = examples[(i as usize * 7919) % examples.len()];
        let m = &map[&e.motion_id];
        let start = (i as usize * 13) % (m.num_frames() - model.config.window + 1);
        let windows = if i % 2 == 0 { model.mode_i_windows(m).unwrap() } else { vec![model.window_at(m, start).unwrap()] };
        let mut g = Graph::new();
        let fwd = model.forward(&mut g, &windows, &e.question, &e.program).unwrap();
        for s in &fwd.steps {
            for w in [s.dep_weights, s.read_weights] {
                let t = g.value(w);
                for r in 0..t.rows() {
                    check(t.row(r).iter().sum());
                }
            }
        }
        for s in fwd.trace(&g, &e.program).steps {
            check(s.dep_weights.iter().sum());
            check(s.level_weights.iter().sum());
        }
    }
    report(4, worst <= C4_TOL, format!("{rows} rows over {C4_FORWARDS} forwards, max |sum - 1| = {worst:.2e}"));
}

/// Shared three-seed experiment behind criteria 5 to 7.
struct Experiment {
    train: usize,
    test: usize,
    majority: f64,
    full: Vec<f64>,
    full_corrupted: Vec<f64>,
    no_selection: Vec<f64>,
    symbolic: Vec<f64>,
    symbolic_corrupted: Vec<f64>,
    full_time: Duration,
}

fn experiment_config(seed: u64, variant: AblationVariant) -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        weight_decay: 0.01,
        batch_size: 16,
        epochs: 60,
        seed,
        variant,
        model: ModelConfig {
            window: 64,
            patch: 8,
            d: 32,
            blocks: 2,
            heads: 2,
            levels: vec![LevelId::Block(0), LevelId::Block(1), LevelId::Final],
            dropout: 0.1,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn experiment() -> &'static Experiment {
    static CELL: OnceLock<Experiment> = OnceLock::new();
    CELL.get_or_init(|| {
        let ms = motions(1000, 5, &synth(4, 16));
        let gen = GenConfig { per_type_quota: 1000, split_ratios: [0.68, 0.15, 0.17], ..GenConfig::default() };
        let manifest = generate_dataset(&ms, 5, &gen).unwrap();
        let map = by_id(ms);
        let gold = |seed| EvalOptions { split: Split::Test, seed, ..EvalOptions::default() };
        let corrupted = |seed| EvalOptions { programs: ProgramSource::Corrupted(C7_RATE), ..gold(seed) };
        let mut x = Experiment {
            train: manifest.split(Split::Train).count(),
            test: manifest.split(Split::Test).count(),
            majority: majority_baseline(&manifest, &gold(0)).unwrap().accuracy,
            full: vec![],
            full_corrupted: vec![],
            no_selection: vec![],
            symbolic: vec![],
            symbolic_corrupted: vec![],
            full_time: Duration::ZERO,
        };
        for seed in SEEDS {
            let t = Instant::now();
            let full = train::<f32>(&manifest, &map, &experiment_config(seed, AblationVariant::Full)).unwrap().model;
            x.full_time += t.elapsed();
            x.full.push(evaluate(&full, &manifest, &map, &gold(seed)).unwrap().accuracy);
            x.full_corrupted.push(evaluate(&full, &manifest, &map, &corrupted(seed)).unwrap().accuracy);
            x.symbolic.push(explicit_baseline(&manifest, &map, &gold(seed)).unwrap().accuracy);
            x.symbolic_corrupted.push(explicit_baseline(&manifest, &map, &corrupted(seed)).unwrap().accuracy);
            let cfg = experiment_config(seed, AblationVariant::NoFeatureSelection);
            let ablated = train::<f32>(&manifest, &map, &cfg).unwrap().model;
            x.no_selection.push(evaluate(&ablated, &manifest, &map, &gold(seed)).unwrap().accuracy);
        }
        x
    })
}

#[test]
fn criterion_05_full_model_accuracy() {
    let x = experiment();
    let m = median(&x.full);
    report(
        5,
        m >= C5_MIN_ACCURACY && x.majority <= C5_MAX_MAJORITY && x.full_time <= C5_TIME,
        format!(
            "{} train / {} test, median test accuracy {m:.3} over {:?} (need >= {C5_MIN_ACCURACY}), majority {:.3}, {:.0?} training",
            x.train, x.test, x.full, x.majority, x.full_time
        ),
    );
}

#[test]
fn criterion_06_feature_selection_is_not_harmful() {
    let x = experiment();
    let (full, ablated) = (median(&x.full), median(&x.no_selection));
    report(
        6,
        full >= ablated - C6_MARGIN,
        format!("median full {full:.3} vs no feature selection {ablated:.3} ({:?})", x.no_selection),
    );
}

#[test]
fn criterion_07_corruption_robustness() {
    let x = experiment();
    let drops = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(g, c)| g - c).collect::<Vec<_>>();
    let neural = median(&drops(&x.full, &x.full_corrupted));
    let symbolic = median(&drops(&x.symbolic, &x.symbolic_corrupted));
    report(
        7,
        neural <= symbolic,
        format!("rate {C7_RATE}: median drop neural {neural:.3} vs symbolic {symbolic:.3}"),
    );
}

#[test]
fn criterion_08_branch_exclusivity() {
    let (manifest, map, cfg) = small_setup(8);
    let model = build_model::<f32>(&manifest, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut identical = 0;
    let examples: Vec<_> = manifest.examples.iter().take(C8_EXAMPLES).collect();
    for e in &examples {
        let windows = model.mode_i_windows(&map[&e.motion_id]).unwrap();
        let logits = |m: &ImoreModel<f32>| {
            let mut g = Graph::new();
            let fwd = m.forward(&mut g, &windows, &e.question, &e.program).unwrap();
            g.value(fwd.logits).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        let mut other = model.clone();
        for q in QuestionType::ALL.into_iter().filter(|&q| q != e.program.question_type()) {
            for id in model.head_params(q) {
                let p = other.params.get_mut(id);
                p.value = Init::Normal { std: 3.0 }.sample(p.value.rows(), p.value.cols(), &mut rng);
            }
        }
        if logits(&model) == logits(&other) {
            identical += 1;
        }
    }
    report(
        8,
        examples.len() == C8_EXAMPLES && identical == C8_EXAMPLES,
        format!("{identical}/{} examples with bitwise-identical logits", examples.len()),
    );
}

const RUN_CONFIG: &str = r#"
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
levels = [0, "final"]
dropout = 0.1
"#;

fn imore(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_imore")).args(args).env_remove("IMORE_SEED").output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn criterion_09_training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    std::fs::write(p("run.toml"), RUN_CONFIG).unwrap();
    imore(&["gen", "--config", s(&p("run.toml")), "--seed", "9", "--out", s(&p("data"))]);
    for run in ["a", "b"] {
        let ckpt = p(&format!("{run}.ckpt"));
        imore(&["train", "--data", s(&p("data")), "--config", s(&p("run.toml")), "--out-ckpt", s(&ckpt), "--seed", "9"]);
        imore(&["eval", "--ckpt", s(&ckpt), "--data", s(&p("data")), "--report", s(&p(run))]);
    }
    let read = |n: &str| std::fs::read(p(n)).unwrap();
    let ckpt_same = read("a.ckpt") == read("b.ckpt");
    let report_same = read("a/report.json") == read("b/report.json");
    report(
        9,
        ckpt_same && report_same,
        format!("checkpoints identical: {ckpt_same}, eval reports identical: {report_same}"),
    );
}

#[test]
fn criterion_10_single_window_modes_agree() {
    let ms = motions(C10_MOTIONS as usize, 10, &synth(4, 16));
    let manifest = generate_dataset(&ms, 10, &GenConfig { per_type_quota: 60, ..GenConfig::default() }).unwrap();
    let cfg = TrainConfig { seed: 10, model: experiment_config(10, AblationVariant::Full).model, ..TrainConfig::default() };
    let model = build_model::<f32>(&manifest, &cfg).unwrap();
    let map = by_id(ms);
    let (mut checked, mut identical) = (0, 0);
    for e in &manifest.examples {
        let m = &map[&e.motion_id];
        assert_eq!(m.num_frames(), model.config.window);
        let one = model.infer_mode_i(m, &e.question, &e.program).unwrap();
        let two = model.infer_mode_ii(m, &e.question, &e.program, 1, checked, RunScore::MaxLogit).unwrap();
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        checked += 1;
        if two.starts == [0] && bits(&one) == bits(&two.logits) {
            identical += 1;
        }
    }
    report(10, checked > 0 && identical == checked, format!("{identical}/{checked} questions bitwise identical"));
}
