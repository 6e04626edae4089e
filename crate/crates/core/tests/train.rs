//! Training loop, evaluation reports and baselines on small generated data.

mod support;

use std::collections::HashMap;

use imore::dataset::{generate_dataset, DatasetManifest, GenConfig, QAExample, Split};
use imore::diff::Graph;
use imore::model::{ModelConfig, MotionWindow};
use imore::motion::MotionSequence;
use imore::train::{
    batch_loss, curve_csv, evaluate, explicit_baseline, majority_baseline, train, train_with, AblationVariant, Column,
    EvalOptions, InferenceMode, ProgramSource, TrainConfig, TrainError,
};
use support::*;

fn data(n: usize, quota: usize) -> (DatasetManifest, HashMap<String, MotionSequence>) {
    data_with(n, GenConfig { per_type_quota: quota, ..GenConfig::default() })
}

fn data_with(n: usize, gen: GenConfig) -> (DatasetManifest, HashMap<String, MotionSequence>) {
    let motions: Vec<MotionSequence> = (0..n as u64).map(motion).collect();
    let manifest = generate_dataset(&motions, 3, &gen).unwrap();
    (manifest, motions.into_iter().map(|m| (m.id.clone(), m)).collect())
}

fn tiny_config(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        epochs,
        batch_size: 8,
        seed,
        model: ModelConfig { window: 64, patch: 8, ..small_config(16, 64, 8) },
        ..TrainConfig::default()
    }
}

/// The first `n` examples, all moved to the train split.
fn train_only(manifest: &DatasetManifest, n: usize) -> DatasetManifest {
    let examples: Vec<QAExample> =
        manifest.examples.iter().take(n).cloned().map(|e| QAExample { split: Split::Train, ..e }).collect();
    DatasetManifest::new(examples, manifest.vocab().clone(), 0, "overfit".into())
}

#[test]
fn presets_record_their_settings() {
    let reference = TrainConfig::preset("reference").unwrap();
    assert_eq!((reference.lr, reference.model.dropout, reference.batch_size, reference.weight_decay), (1e-6, 0.1, 4, 1e-4));
    let desk = TrainConfig::preset("desk").unwrap();
    assert_eq!((desk.lr, desk.batch_size, desk.epochs, desk.weight_decay), (3e-4, 16, 60, 1e-4));
    assert!(TrainConfig::preset("other").is_none());
    assert!(TrainConfig { lr: 0.0, ..desk.clone() }.validate().is_err());
    assert!(TrainConfig { corruption_rate: 1.5, ..desk.clone() }.validate().is_err());
    assert!(TrainConfig { variant: AblationVariant::ExplicitOracle, ..desk }.validate().is_err());
}

#[test]
fn train_config_rejects_unknown_keys() {
    let ok: TrainConfig = serde_json::from_str(r#"{"lr": 0.001, "mode": "II"}"#).unwrap();
    assert_eq!(ok.mode, InferenceMode::II);
    assert!(serde_json::from_str::<TrainConfig>(r#"{"learning_rate": 0.001}"#).is_err());
}

#[test]
fn overfits_thirty_two_examples() {
    let (manifest, motions) = data(12, 30);
    let small = train_only(&manifest, 32);
    assert_eq!(small.split(Split::Train).count(), 32);
    let cfg = TrainConfig { epochs: 200, ..tiny_config(1, 200) };
    let out = train::<f32>(&small, &motions, &cfg).unwrap();
    let report =
        evaluate(&out.model, &small, &motions, &EvalOptions { split: Split::Train, ..EvalOptions::default() }).unwrap();
    assert_eq!(report.accuracy, 1.0, "{}", curve_csv(&out.curve));
}

#[test]
fn same_seed_gives_identical_curves_and_weights() {
    let (manifest, motions) = data(16, 20);
    let a = train::<f32>(&manifest, &motions, &tiny_config(5, 3)).unwrap();
    let b = train::<f32>(&manifest, &motions, &tiny_config(5, 3)).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.model.to_bytes(serde_json::Value::Null), b.model.to_bytes(serde_json::Value::Null));
    let c = train::<f32>(&manifest, &motions, &tiny_config(6, 3)).unwrap();
    assert_ne!(a.curve, c.curve);
    let csv = curve_csv(&a.curve);
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("epoch,train_loss,train_accuracy,val_accuracy"));
}

#[test]
fn batch_loss_is_the_mean_cross_entropy() {
    let (manifest, motions) = data(8, 12);
    let cfg = tiny_config(2, 1);
    let model = imore::train::build_model::<f64>(&manifest, &cfg).unwrap();
    let batch: Vec<(&QAExample, imore::dsl::Program)> =
        manifest.split(Split::Train).take(5).map(|e| (e, e.program.clone())).collect();
    let mut windows: HashMap<&str, Vec<MotionWindow>> = HashMap::new();
    for (e, _) in &batch {
        windows.insert(e.motion_id.as_str(), model.mode_i_windows(&motions[&e.motion_id]).unwrap());
    }
    let mut g = Graph::new();
    let fwd = batch_loss(&mut g, &model, &batch, &windows).unwrap();
    let got = g.value(fwd.loss).item();

    let mut expected = 0.0;
    for (e, p) in &batch {
        let mut g = Graph::new();
        let f = model.forward(&mut g, &windows[e.motion_id.as_str()], &e.question, p).unwrap();
        let logits = g.value(f.logits).data().to_vec();
        let target = model.answers.index(p.question_type(), &e.answer.label).unwrap();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        expected += lse - logits[target];
    }
    expected /= batch.len() as f64;
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
}

#[test]
fn divergence_is_reported_with_a_dump() {
    let (manifest, motions) = data(6, 6);
    let mut cfg = tiny_config(0, 1);
    cfg.model.input_scale = 1e39;
    let dir = tempfile::tempdir().unwrap();
    match train_with::<f32>(&manifest, &motions, &cfg, Some(dir.path()), |_| {}) {
        Err(TrainError::Divergence { epoch: 1, batch: 0, dump: Some(path), .. }) => {
            let text = std::fs::read_to_string(path).unwrap();
            assert!(text.contains("param_max_abs"));
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn reports_are_consistent_and_deterministic() {
    let (manifest, motions) = data(24, 30);
    let out = train::<f64>(&manifest, &motions, &tiny_config(3, 2)).unwrap();
    let opts = EvalOptions::default();
    let report = evaluate(&out.model, &manifest, &motions, &opts).unwrap();
    assert_eq!(report.total, manifest.split(Split::Test).count());
    assert!((report.accuracy - report.accuracy_from_confusion()).abs() < 1e-15);
    let weighted: f64 = report.cells.values().map(|r| r[&Column::All].correct as f64).sum::<f64>() / report.total as f64;
    assert!((report.accuracy - weighted).abs() < 1e-15);

    let again = evaluate(&out.model, &manifest, &motions, &opts).unwrap();
    assert_eq!(report, again);
    let threaded = evaluate(&out.model, &manifest, &motions, &EvalOptions { workers: 3, ..opts.clone() }).unwrap();
    assert_eq!(report, threaded);

    let zero = evaluate(&out.model, &manifest, &motions, &EvalOptions { programs: ProgramSource::Corrupted(0.0), ..opts.clone() })
        .unwrap();
    assert_eq!(report.predictions, zero.predictions);

    let predicted = evaluate(&out.model, &manifest, &motions, &EvalOptions { programs: ProgramSource::Predicted, ..opts.clone() })
        .unwrap();
    assert_eq!(report.predictions, predicted.predictions);

    let mode_ii = EvalOptions { mode: InferenceMode::II, runs: 2, ..opts };
    let a = evaluate(&out.model, &manifest, &motions, &mode_ii).unwrap();
    assert_eq!(a, evaluate(&out.model, &manifest, &motions, &mode_ii).unwrap());
    assert!(report.to_table().lines().count() == 2);
    assert!(report.to_text().contains("config_hash"));
}

#[test]
fn empty_cells_are_not_applicable() {
    let mut gen = GenConfig { per_type_quota: 30, ..GenConfig::default() };
    gen.cell_quota.insert("query_direction/between".into(), 0);
    let (manifest, _) = data_with(24, gen);
    let report = majority_baseline(&manifest, &EvalOptions { split: Split::Train, ..EvalOptions::default() }).unwrap();
    use imore::dsl::QuestionType;
    assert_eq!(report.cell(QuestionType::QueryDirection, Column::Between), None);
    assert!(report.to_table().contains("N/A"));
    assert!(report.cell(QuestionType::QueryAction, Column::Between).is_some());
}

#[test]
fn explicit_baseline_is_exact_on_gold_and_hurt_by_corruption() {
    let (manifest, motions) = data(40, 60);
    let gold = explicit_baseline(&manifest, &motions, &EvalOptions::default()).unwrap();
    assert_eq!(gold.accuracy, 1.0);
    let noisy =
        explicit_baseline(&manifest, &motions, &EvalOptions { programs: ProgramSource::Corrupted(0.1), ..EvalOptions::default() })
            .unwrap();
    assert!(noisy.accuracy < 1.0);
    assert!((noisy.accuracy - noisy.accuracy_from_confusion()).abs() < 1e-15);
}

#[test]
fn majority_baseline_answers_one_label_per_type() {
    let (manifest, _) = data(24, 30);
    let report = majority_baseline(&manifest, &EvalOptions::default()).unwrap();
    for (q, conf) in &report.confusion {
        let used: Vec<usize> =
            (0..conf.labels.len()).filter(|&j| conf.counts.iter().any(|row| row[j] > 0)).collect();
        assert!(used.len() <= 1, "{q}: {used:?}");
    }
}

#[test]
fn program_sources_parse() {
    assert_eq!("gold".parse::<ProgramSource>().unwrap(), ProgramSource::Gold);
    assert_eq!("predicted".parse::<ProgramSource>().unwrap(), ProgramSource::Predicted);
    assert_eq!("corrupted:0.25".parse::<ProgramSource>().unwrap(), ProgramSource::Corrupted(0.25));
    assert!("corrupted:2".parse::<ProgramSource>().is_err());
    assert!("noisy".parse::<ProgramSource>().is_err());
}

#[test]
fn missing_motions_are_reported() {
    let (manifest, mut motions) = data(8, 8);
    let id = manifest.split(Split::Train).next().unwrap().motion_id.clone();
    motions.remove(&id);
    let model = imore::train::build_model::<f32>(&manifest, &tiny_config(0, 1)).unwrap();
    let opts = EvalOptions { split: Split::Train, ..EvalOptions::default() };
    assert!(matches!(evaluate(&model, &manifest, &motions, &opts), Err(TrainError::MissingMotion(_))));
}
