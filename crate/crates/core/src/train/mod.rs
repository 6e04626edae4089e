//! Training loop, evaluation reports, baselines and ablations.

mod ablation;
mod eval;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{corrupt_program, stable_hash, DatasetManifest, PredictError, QAExample, Split};
use crate::diff::{AdamW, AdamWConfig, DiffError, Graph, Scalar, DEFAULT_WEIGHT_DECAY};
use crate::model::{
    mode_ii_starts, AnswerSpace, ImoreModel, ModelConfig, ModelError, MotionWindow, RunScore, TextVocab, Variant,
};
use crate::motion::MotionSequence;

pub use ablation::{median, run_ablation, AblationRow, AblationTable, REFERENCE_ACCURACY};
pub use eval::{
    evaluate, explicit_baseline, majority_baseline, select_program, CellStats, Column, Confusion, EvalOptions,
    EvalReport, Prediction, ProgramSource,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Grammar(#[from] PredictError),
    #[error("config error: {0}")]
    Config(String),
    #[error("motion `{0}` is missing")]
    MissingMotion(String),
    #[error("the {0} split is empty")]
    EmptySplit(Split),
    #[error("loss diverged at epoch {epoch}, batch {batch}: {detail}")]
    Divergence { epoch: usize, batch: usize, detail: String, dump: Option<PathBuf> },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

/// Whole-sequence inference mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InferenceMode {
    /// Consecutive windows pooled into one knowledge pool.
    #[serde(rename = "I", alias = "i")]
    I,
    /// Best of several randomly placed windows.
    #[serde(rename = "II", alias = "ii")]
    II,
}

impl std::fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InferenceMode::I => "I",
            InferenceMode::II => "II",
        })
    }
}

impl std::str::FromStr for InferenceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "I" | "i" | "1" => Ok(InferenceMode::I),
            "II" | "ii" | "2" => Ok(InferenceMode::II),
            _ => Err(format!("unknown mode `{s}` (expected I or II)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    NoFeatureSelection,
    MacControl,
    /// Symbolic execution of the programs over gold annotations.
    ExplicitOracle,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] =
        [AblationVariant::MacControl, AblationVariant::NoFeatureSelection, AblationVariant::Full, AblationVariant::ExplicitOracle];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoFeatureSelection => "no_feature_selection",
            AblationVariant::MacControl => "mac_control",
            AblationVariant::ExplicitOracle => "explicit_oracle",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    /// Network variant, or `None` for the parameter-free symbolic baseline.
    pub fn model_variant(self) -> Option<Variant> {
        match self {
            AblationVariant::Full => Some(Variant::Full),
            AblationVariant::NoFeatureSelection => Some(Variant::NoFeatureSelection),
            AblationVariant::MacControl => Some(Variant::MacControl),
            AblationVariant::ExplicitOracle => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub precision: Precision,
    pub mode: InferenceMode,
    /// Sampled windows per question in Mode II.
    pub mode_ii_runs: usize,
    pub run_score: RunScore,
    /// Probability of perturbing each filter/relate step of a training program.
    pub corruption_rate: f64,
    pub variant: AblationVariant,
    /// Rescales the global gradient norm down to this value; 0 disables.
    pub grad_clip: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            batch_size: 16,
            epochs: 60,
            seed: 0,
            precision: Precision::F32,
            mode: InferenceMode::I,
            mode_ii_runs: 5,
            run_score: RunScore::MaxLogit,
            corruption_rate: 0.0,
            variant: AblationVariant::Full,
            grad_clip: 0.0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Desk-scale defaults for training from scratch.
    pub fn desk() -> Self {
        TrainConfig::default()
    }

    /// Optimizer settings of the published full-scale setup, which fine-tunes
    /// pretrained encoders.
    pub fn reference() -> Self {
        TrainConfig {
            lr: 1e-6,
            weight_decay: 1e-4,
            batch_size: 4,
            model: ModelConfig { dropout: 0.1, ..ModelConfig::default() },
            ..TrainConfig::default()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "reference" => Some(Self::reference()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |m: String| Err(TrainError::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return err(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.corruption_rate) {
            return err(format!("corruption_rate {} outside [0, 1]", self.corruption_rate));
        }
        if self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return err("weight_decay and grad_clip must be non-negative".into());
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return err("batch_size and epochs must be positive".into());
        }
        if self.mode == InferenceMode::II && self.mode_ii_runs == 0 {
            return err("mode_ii_runs must be positive".into());
        }
        self.model_config()?.validate()?;
        Ok(())
    }

    /// Model config with the ablation variant applied.
    pub fn model_config(&self) -> Result<ModelConfig, TrainError> {
        let variant = self
            .variant
            .model_variant()
            .ok_or_else(|| TrainError::Config("the explicit oracle has no trainable model".into()))?;
        Ok(ModelConfig { variant, ..self.model.clone() })
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// First 16 hex digits of the SHA-256 of the value's JSON form.
pub fn config_hash<S: Serialize>(value: &S) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    Sha256::digest(json.as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// One row of the loss curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

pub fn curve_csv(curve: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,train_accuracy,val_accuracy\n");
    for e in curve {
        let val = e.val_accuracy.map_or(String::new(), |v| format!("{v:.6}"));
        out.push_str(&format!("{},{:.8},{:.6},{val}\n", e.epoch, e.train_loss, e.train_accuracy));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters of the best validation epoch.
    pub model: ImoreModel<T>,
    pub curve: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val: Option<f64>,
}

/// Text vocabulary over the train questions and answer space from the manifest.
pub fn build_model<T: Scalar>(manifest: &DatasetManifest, config: &TrainConfig) -> Result<ImoreModel<T>, TrainError> {
    let text_vocab = TextVocab::build(manifest.split(Split::Train).map(|e| e.question.as_str()));
    let answers = AnswerSpace { labels: manifest.meta.answer_labels.clone() };
    Ok(ImoreModel::new(config.model_config()?, manifest.vocab().clone(), text_vocab, answers, config.seed)?)
}

pub(crate) fn mix(seed: u64, a: u64, b: u64) -> u64 {
    stable_hash(&format!("{a}/{b}"), seed)
}

/// Training windows of a motion: all Mode I windows, or one random window
/// per epoch in Mode II.
fn training_windows<T: Scalar>(
    model: &ImoreModel<T>,
    motion: &MotionSequence,
    config: &TrainConfig,
    epoch: usize,
) -> Result<Vec<MotionWindow>, ModelError> {
    match config.mode {
        InferenceMode::I => model.mode_i_windows(motion),
        InferenceMode::II => {
            let seed = stable_hash(&motion.id, mix(config.seed, epoch as u64, 0x5eed));
            let start = mode_ii_starts(motion.num_frames(), model.config.window, 1, seed)[0];
            Ok(vec![model.window_at(motion, start)?])
        }
    }
}

/// Shuffled motion order, each motion's questions shuffled and kept together,
/// then cut into batches. Questions on one motion share its encoding.
pub fn motion_grouped_batches(examples: &[&QAExample], batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_motion: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in examples.iter().enumerate() {
        by_motion.entry(e.motion_id.as_str()).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = by_motion.into_values().collect();
    groups.shuffle(&mut rng);
    let mut order = Vec::with_capacity(examples.len());
    for mut g in groups {
        g.shuffle(&mut rng);
        order.extend(g);
    }
    order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

/// Per-example losses and correctness of one batch, built on `g`.
pub struct BatchForward {
    pub loss: crate::diff::Var,
    pub example_losses: Vec<crate::diff::Var>,
    pub correct: usize,
}

/// Mean cross-entropy over a batch; questions on one motion share one encoding.
pub fn batch_loss<T: Scalar>(
    g: &mut Graph<T>,
    model: &ImoreModel<T>,
    batch: &[(&QAExample, crate::dsl::Program)],
    windows: &HashMap<&str, Vec<MotionWindow>>,
) -> Result<BatchForward, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Config("empty batch".into()));
    }
    let mut example_losses = Vec::with_capacity(batch.len());
    let mut correct = 0;
    let mut i = 0;
    while i < batch.len() {
        let motion_id = batch[i].0.motion_id.as_str();
        let w = windows.get(motion_id).ok_or_else(|| TrainError::MissingMotion(motion_id.to_string()))?;
        let enc = model.encode_windows(g, w)?;
        while i < batch.len() && batch[i].0.motion_id == motion_id {
            let (e, program) = &batch[i];
            let fwd = model.answer(g, &enc, &e.question, program)?;
            let loss = model.loss(g, &fwd, &e.answer.label)?;
            let target = model.answers.index(fwd.qtype, &e.answer.label);
            if argmax(g.value(fwd.logits).data()) == target {
                correct += 1;
            }
            example_losses.push(loss);
            i += 1;
        }
    }
    let total = g.sum(&example_losses)?;
    let loss = g.scale(total, T::of(1.0 / batch.len() as f64));
    Ok(BatchForward { loss, example_losses, correct })
}

pub(crate) fn argmax<T: Scalar>(xs: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &x) in xs.iter().enumerate() {
        if best.map_or(true, |(_, b)| x > b) {
            best = Some((i, x));
        }
    }
    best.map(|(i, _)| i)
}

fn write_dump<T: Scalar>(
    dir: &Path,
    epoch: usize,
    batch: usize,
    ids: &[String],
    losses: &[f64],
    model: &ImoreModel<T>,
) -> Result<PathBuf, TrainError> {
    let params: BTreeMap<&str, f64> = model.params.iter().map(|(_, p)| (p.name.as_str(), p.value.max_abs().to_f64c())).collect();
    let dump = serde_json::json!({
        "epoch": epoch,
        "batch": batch,
        "examples": ids,
        "losses": losses,
        "param_max_abs": params,
    });
    std::fs::create_dir_all(dir).map_err(|source| TrainError::Io { path: dir.to_path_buf(), source })?;
    let path = dir.join(format!("divergence_epoch{epoch}_batch{batch}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&dump).expect("dump serializes"))
        .map_err(|source| TrainError::Io { path: path.clone(), source })?;
    Ok(path)
}

/// Trains a model from scratch; see [`train_with`].
pub fn train<T: Scalar>(
    manifest: &DatasetManifest,
    motions: &HashMap<String, MotionSequence>,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>, TrainError> {
    train_with(manifest, motions, config, None, |_| {})
}

/// Minimizes mean cross-entropy over the train split with AdamW. Validation
/// accuracy (Mode I, gold programs) is computed after every epoch and the
/// parameters of the best epoch are returned. A non-finite loss aborts with
/// [`TrainError::Divergence`], writing a diagnostic dump to `dump_dir`.
pub fn train_with<T: Scalar>(
    manifest: &DatasetManifest,
    motions: &HashMap<String, MotionSequence>,
    config: &TrainConfig,
    dump_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome<T>, TrainError> {
    config.validate()?;
    let train_set: Vec<&QAExample> = manifest.split(Split::Train).collect();
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    let val_set: Vec<&QAExample> = manifest.split(Split::Val).collect();
    let mut model = build_model::<T>(manifest, config)?;
    let get_motion =
        |id: &str| motions.get(id).ok_or_else(|| TrainError::MissingMotion(id.to_string()));
    for e in train_set.iter().chain(&val_set) {
        get_motion(&e.motion_id)?;
    }
    let mut opt = AdamW::new(AdamWConfig { lr: config.lr, weight_decay: config.weight_decay, ..AdamWConfig::default() });
    let val_opts = EvalOptions { split: Split::Val, ..EvalOptions::default() };

    let mut curve = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, crate::diff::ParamRegistry<T>)> = None;
    for epoch in 1..=config.epochs {
        let mut windows: HashMap<&str, Vec<MotionWindow>> = HashMap::new();
        for e in &train_set {
            if !windows.contains_key(e.motion_id.as_str()) {
                let w = training_windows(&model, get_motion(&e.motion_id)?, config, epoch)?;
                windows.insert(e.motion_id.as_str(), w);
            }
        }
        let batches = motion_grouped_batches(&train_set, config.batch_size, mix(config.seed, epoch as u64, 1));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (bi, idx) in batches.iter().enumerate() {
            let batch: Vec<(&QAExample, crate::dsl::Program)> = idx
                .iter()
                .map(|&i| {
                    let e = train_set[i];
                    let program = if config.corruption_rate > 0.0 {
                        let seed = stable_hash(&e.id, mix(config.seed, epoch as u64, 2));
                        corrupt_program(&e.program, config.corruption_rate, seed, manifest.vocab())
                    } else {
                        e.program.clone()
                    };
                    (e, program)
                })
                .collect();
            let mut g = if model.config.dropout > 0.0 {
                Graph::training(mix(config.seed, epoch as u64, 3 + bi as u64))
            } else {
                Graph::new()
            };
            let fwd = batch_loss(&mut g, &model, &batch, &windows)?;
            let loss = g.value(fwd.loss).item().to_f64c();
            let grads = match g.backward(fwd.loss) {
                Ok(grads) if loss.is_finite() && grads.params().all_finite() => grads,
                outcome => {
                    let detail = match outcome {
                        Err(e) => e.to_string(),
                        Ok(_) if !loss.is_finite() => format!("loss is {loss}"),
                        Ok(_) => "non-finite gradient".to_string(),
                    };
                    let ids: Vec<String> = batch.iter().map(|(e, _)| e.id.clone()).collect();
                    let losses: Vec<f64> =
                        fwd.example_losses.iter().map(|&v| g.value(v).item().to_f64c()).collect();
                    let dump = match dump_dir {
                        Some(dir) => Some(write_dump(dir, epoch, bi, &ids, &losses, &model)?),
                        None => None,
                    };
                    return Err(TrainError::Divergence { epoch, batch: bi, detail, dump });
                }
            };
            let mut grads = grads.into_params();
            if config.grad_clip > 0.0 {
                let norm = grads.norm();
                if norm > config.grad_clip {
                    grads.scale(T::of(config.grad_clip / norm));
                }
            }
            opt.step(&mut model.params, &grads)?;
            loss_sum += loss * batch.len() as f64;
            correct += fwd.correct;
        }
        let val_accuracy = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(&model, manifest, motions, &val_opts)?.accuracy)
        };
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            val_accuracy,
        };
        on_epoch(&log);
        let score = val_accuracy.unwrap_or(log.train_accuracy);
        if best.as_ref().map_or(true, |(b, _, _)| score > *b) {
            best = Some((score, epoch, model.params.clone()));
        }
        curve.push(log);
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    model.params = params;
    let best_val = curve[best_epoch - 1].val_accuracy;
    Ok(TrainOutcome { model, curve, best_epoch, best_val })
}
