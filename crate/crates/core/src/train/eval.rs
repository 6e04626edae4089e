use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{corrupt_program, stable_hash, template_parts, DatasetManifest, QAExample, QuestionGrammar, Split};
use crate::diff::{Graph, Scalar};
use crate::dsl::{Program, QuestionType, Relation};
use crate::model::{ImoreModel, RunScore};
use crate::motion::MotionSequence;
use crate::oracle::execute;
use crate::vocab::ConceptVocabulary;

use super::{argmax, config_hash, InferenceMode, TrainError};

/// Where evaluation programs come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ProgramSource {
    Gold,
    /// Recovered from the question text by the template grammar.
    Predicted,
    /// Gold programs with each filter/relate step perturbed at this rate.
    Corrupted(f64),
}

impl fmt::Display for ProgramSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProgramSource::Gold => f.write_str("gold"),
            ProgramSource::Predicted => f.write_str("predicted"),
            ProgramSource::Corrupted(r) => write!(f, "corrupted:{r}"),
        }
    }
}

impl FromStr for ProgramSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gold" => Ok(ProgramSource::Gold),
            "predicted" => Ok(ProgramSource::Predicted),
            _ => {
                let rate = s
                    .strip_prefix("corrupted:")
                    .ok_or_else(|| format!("unknown program source `{s}` (gold, predicted or corrupted:RATE)"))?;
                let rate: f64 = rate.parse().map_err(|_| format!("bad corruption rate `{rate}`"))?;
                if !(0.0..=1.0).contains(&rate) {
                    return Err(format!("corruption rate {rate} outside [0, 1]"));
                }
                Ok(ProgramSource::Corrupted(rate))
            }
        }
    }
}

impl From<ProgramSource> for String {
    fn from(p: ProgramSource) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for ProgramSource {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub split: Split,
    pub mode: InferenceMode,
    pub runs: usize,
    pub run_score: RunScore,
    pub programs: ProgramSource,
    /// Seeds program corruption and Mode II window sampling.
    pub seed: u64,
    /// Evaluation threads; not part of the report identity.
    #[serde(skip)]
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            split: Split::Test,
            mode: InferenceMode::I,
            runs: 5,
            run_score: RunScore::MaxLogit,
            programs: ProgramSource::Gold,
            seed: 0,
            workers: 1,
        }
    }
}

/// Column of the per-type accuracy grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Column {
    All,
    Before,
    After,
    Between,
}

impl Column {
    pub const ALL: [Column; 4] = [Column::All, Column::Before, Column::After, Column::Between];

    pub fn of(relation: Relation) -> Column {
        match relation {
            Relation::Before => Column::Before,
            Relation::After => Column::After,
            Relation::Between => Column::Between,
        }
    }

    pub fn header(self) -> &'static str {
        match self {
            Column::All => "All",
            Column::Before => "Before",
            Column::After => "After",
            Column::Between => "BTW",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellStats {
    pub correct: usize,
    pub total: usize,
}

impl CellStats {
    /// `None` when the cell has no questions.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

/// Rows are gold labels, columns predictions; `unanswered` counts
/// questions with no prediction (failed program or symbolic error).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
    pub unanswered: Vec<usize>,
}

impl Confusion {
    fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        Confusion { labels, counts: vec![vec![0; n]; n], unanswered: vec![0; n] }
    }

    fn index(&mut self, label: &str) -> usize {
        if let Some(i) = self.labels.iter().position(|l| l == label) {
            return i;
        }
        self.labels.push(label.to_string());
        for row in &mut self.counts {
            row.push(0);
        }
        self.counts.push(vec![0; self.labels.len()]);
        self.unanswered.push(0);
        self.labels.len() - 1
    }

    pub fn correct(&self) -> usize {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum::<usize>() + self.unanswered.iter().sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub question_type: QuestionType,
    pub relation: Option<Relation>,
    pub answer: String,
    pub predicted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `model`, `majority` or `explicit`.
    pub method: String,
    pub split: Split,
    pub mode: InferenceMode,
    pub programs: ProgramSource,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub cells: BTreeMap<QuestionType, BTreeMap<Column, CellStats>>,
    pub confusion: BTreeMap<QuestionType, Confusion>,
    pub config_hash: String,
    pub seed: u64,
    pub predictions: Vec<Prediction>,
}

impl EvalReport {
    fn build(
        method: &str,
        opts: &EvalOptions,
        labels: &BTreeMap<QuestionType, Vec<String>>,
        predictions: Vec<Prediction>,
        config_hash: String,
    ) -> Self {
        let mut cells: BTreeMap<QuestionType, BTreeMap<Column, CellStats>> = QuestionType::ALL
            .into_iter()
            .map(|q| (q, Column::ALL.into_iter().map(|c| (c, CellStats::default())).collect()))
            .collect();
        let mut confusion: BTreeMap<QuestionType, Confusion> = QuestionType::ALL
            .into_iter()
            .map(|q| (q, Confusion::new(labels.get(&q).cloned().unwrap_or_default())))
            .collect();
        let mut correct = 0;
        for p in &predictions {
            let ok = p.predicted.as_deref() == Some(p.answer.as_str());
            correct += usize::from(ok);
            let row = cells.get_mut(&p.question_type).expect("all types");
            let mut cols = vec![Column::All];
            cols.extend(p.relation.map(Column::of));
            for c in cols {
                let cell = row.get_mut(&c).expect("all columns");
                cell.total += 1;
                cell.correct += usize::from(ok);
            }
            let conf = confusion.get_mut(&p.question_type).expect("all types");
            let gold = conf.index(&p.answer);
            match &p.predicted {
                Some(label) => {
                    let pred = conf.index(label);
                    conf.counts[gold][pred] += 1;
                }
                None => conf.unanswered[gold] += 1,
            }
        }
        let total = predictions.len();
        EvalReport {
            method: method.to_string(),
            split: opts.split,
            mode: opts.mode,
            programs: opts.programs,
            total,
            correct,
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            cells,
            confusion,
            config_hash,
            seed: opts.seed,
            predictions,
        }
    }

    pub fn cell(&self, q: QuestionType, c: Column) -> Option<f64> {
        self.cells.get(&q).and_then(|r| r.get(&c)).and_then(|s| s.accuracy())
    }

    /// Overall accuracy recomputed from the confusion matrices.
    pub fn accuracy_from_confusion(&self) -> f64 {
        let (c, t) = self.confusion.values().fold((0, 0), |(c, t), m| (c + m.correct(), t + m.total()));
        if t == 0 {
            0.0
        } else {
            c as f64 / t as f64
        }
    }

    /// One header row and one value row: per question type All/Before/After/BTW, then overall.
    pub fn to_table(&self) -> String {
        let mut head = Vec::new();
        let mut row = Vec::new();
        for q in QuestionType::ALL {
            for c in Column::ALL {
                head.push(format!("{}/{}", q.name(), c.header()));
                row.push(self.cell(q, c).map_or("N/A".to_string(), |a| format!("{a:.3}")));
            }
        }
        head.push("overall".into());
        row.push(format!("{:.3}", self.accuracy));
        format!("{}\n{}\n", head.join("\t"), row.join("\t"))
    }

    /// Human-readable summary with counts and confusion matrices.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "method: {}", self.method).ok();
        writeln!(out, "split: {}  mode: {}  programs: {}", self.split, self.mode, self.programs).ok();
        writeln!(out, "config_hash: {}  seed: {}", self.config_hash, self.seed).ok();
        writeln!(out, "overall: {:.4} ({}/{})", self.accuracy, self.correct, self.total).ok();
        for (q, row) in &self.cells {
            let cells: Vec<String> = Column::ALL
                .iter()
                .map(|c| {
                    let s = row[c];
                    match s.accuracy() {
                        Some(a) => format!("{} {a:.4} ({}/{})", c.header(), s.correct, s.total),
                        None => format!("{} N/A", c.header()),
                    }
                })
                .collect();
            writeln!(out, "{}: {}", q.name(), cells.join("  ")).ok();
        }
        for (q, m) in &self.confusion {
            if m.total() == 0 {
                continue;
            }
            writeln!(out, "confusion {} (rows gold, columns predicted, last column unanswered):", q.name()).ok();
            writeln!(out, "  {}", m.labels.join(" ")).ok();
            for (i, l) in m.labels.iter().enumerate() {
                let counts: Vec<String> = m.counts[i].iter().map(|c| c.to_string()).collect();
                writeln!(out, "  {l}: {} | {}", counts.join(" "), m.unanswered[i]).ok();
            }
        }
        out
    }
}

/// The program used for an example under `source`; `None` when the grammar
/// cannot parse the question.
pub fn select_program(
    example: &QAExample,
    source: ProgramSource,
    grammar: Option<&QuestionGrammar>,
    vocab: &ConceptVocabulary,
    seed: u64,
) -> Option<Program> {
    match source {
        ProgramSource::Gold => Some(example.program.clone()),
        ProgramSource::Predicted => grammar.and_then(|g| g.predict_program(&example.question).ok()),
        ProgramSource::Corrupted(rate) => {
            Some(corrupt_program(&example.program, rate, stable_hash(&example.id, seed), vocab))
        }
    }
}

fn relation_of(example: &QAExample) -> Option<Relation> {
    template_parts(&example.program).and_then(|(r, _)| r)
}

fn prediction(example: &QAExample, predicted: Option<String>) -> Prediction {
    Prediction {
        id: example.id.clone(),
        question_type: example.question_type,
        relation: relation_of(example),
        answer: example.answer.label.clone(),
        predicted,
    }
}

fn split_examples<'a>(manifest: &'a DatasetManifest, split: Split) -> Result<Vec<&'a QAExample>, TrainError> {
    let v: Vec<&QAExample> = manifest.split(split).collect();
    if v.is_empty() {
        return Err(TrainError::EmptySplit(split));
    }
    Ok(v)
}

fn grammar_for(manifest: &DatasetManifest, source: ProgramSource) -> Result<Option<QuestionGrammar>, TrainError> {
    Ok(match source {
        ProgramSource::Predicted => Some(QuestionGrammar::new(manifest.vocab())?),
        _ => None,
    })
}

fn predict_chunk<T: Scalar>(
    model: &ImoreModel<T>,
    chunk: &[&QAExample],
    motions: &HashMap<String, MotionSequence>,
    opts: &EvalOptions,
    grammar: Option<&QuestionGrammar>,
) -> Result<Vec<Prediction>, TrainError> {
    let mut out = Vec::with_capacity(chunk.len());
    let mut i = 0;
    while i < chunk.len() {
        let motion_id = &chunk[i].motion_id;
        let motion = motions.get(motion_id).ok_or_else(|| TrainError::MissingMotion(motion_id.clone()))?;
        let mut g = Graph::new();
        let enc = match opts.mode {
            InferenceMode::I => Some(model.encode_windows(&mut g, &model.mode_i_windows(motion)?)?),
            InferenceMode::II => None,
        };
        while i < chunk.len() && &chunk[i].motion_id == motion_id {
            let e = chunk[i];
            i += 1;
            let Some(program) = select_program(e, opts.programs, grammar, &model.vocab, opts.seed) else {
                out.push(prediction(e, None));
                continue;
            };
            if model.answers.labels(program.question_type()).is_empty() {
                out.push(prediction(e, None));
                continue;
            }
            let logits = match &enc {
                Some(enc) => {
                    let fwd = model.answer(&mut g, enc, &e.question, &program)?;
                    g.value(fwd.logits).data().to_vec()
                }
                None => {
                    let seed = stable_hash(&e.id, opts.seed ^ 0x2);
                    model.infer_mode_ii(motion, &e.question, &program, opts.runs, seed, opts.run_score)?.logits
                }
            };
            let label = argmax(&logits).map(|k| model.answers.labels(program.question_type())[k].clone());
            out.push(prediction(e, label));
        }
    }
    Ok(out)
}

/// Accuracy of a model on one split. Examples are split across
/// `opts.workers` threads in contiguous chunks; results do not depend on the
/// worker count.
pub fn evaluate<T: Scalar>(
    model: &ImoreModel<T>,
    manifest: &DatasetManifest,
    motions: &HashMap<String, MotionSequence>,
    opts: &EvalOptions,
) -> Result<EvalReport, TrainError> {
    let mut examples = split_examples(manifest, opts.split)?;
    examples.sort_by(|a, b| a.motion_id.cmp(&b.motion_id));
    let grammar = grammar_for(manifest, opts.programs)?;
    let workers = opts.workers.clamp(1, examples.len());
    let chunk = examples.len().div_ceil(workers);
    let predictions = if workers == 1 {
        predict_chunk(model, &examples, motions, opts, grammar.as_ref())?
    } else {
        let parts: Vec<Result<Vec<Prediction>, TrainError>> = std::thread::scope(|s| {
            let handles: Vec<_> = examples
                .chunks(chunk)
                .map(|c| s.spawn(|| predict_chunk(model, c, motions, opts, grammar.as_ref())))
                .collect();
            handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
        });
        let mut all = Vec::with_capacity(examples.len());
        for p in parts {
            all.extend(p?);
        }
        all
    };
    let hash = config_hash(&serde_json::json!({
        "model": model.config,
        "model_seed": model.seed,
        "eval": opts,
    }));
    Ok(EvalReport::build("model", opts, &model.answers.labels, predictions, hash))
}

/// Always answers the most frequent train answer of the question type
/// (ties go to the alphabetically first label).
pub fn majority_baseline(manifest: &DatasetManifest, opts: &EvalOptions) -> Result<EvalReport, TrainError> {
    let examples = split_examples(manifest, opts.split)?;
    let mut counts: BTreeMap<QuestionType, BTreeMap<&str, usize>> = BTreeMap::new();
    for e in manifest.split(Split::Train) {
        *counts.entry(e.question_type).or_default().entry(e.answer.label.as_str()).or_default() += 1;
    }
    let majority: BTreeMap<QuestionType, String> = counts
        .iter()
        .filter_map(|(q, c)| {
            let best = c.iter().max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))?;
            Some((*q, best.0.to_string()))
        })
        .collect();
    let predictions = examples.iter().map(|e| prediction(e, majority.get(&e.question_type).cloned())).collect();
    let hash = config_hash(&serde_json::json!({ "method": "majority", "eval": opts }));
    Ok(EvalReport::build("majority", opts, &manifest.meta.answer_labels, predictions, hash))
}

/// Symbolic execution of the selected programs over gold annotations.
pub fn explicit_baseline(
    manifest: &DatasetManifest,
    motions: &HashMap<String, MotionSequence>,
    opts: &EvalOptions,
) -> Result<EvalReport, TrainError> {
    let examples = split_examples(manifest, opts.split)?;
    let grammar = grammar_for(manifest, opts.programs)?;
    let mut predictions = Vec::with_capacity(examples.len());
    for e in examples {
        let motion = motions.get(&e.motion_id).ok_or_else(|| TrainError::MissingMotion(e.motion_id.clone()))?;
        let answer = select_program(e, opts.programs, grammar.as_ref(), manifest.vocab(), opts.seed)
            .and_then(|p| execute(motion, &p).ok())
            .map(|c| c.label);
        predictions.push(prediction(e, answer));
    }
    let hash = config_hash(&serde_json::json!({ "method": "explicit", "eval": opts }));
    Ok(EvalReport::build("explicit", opts, &manifest.meta.answer_labels, predictions, hash))
}
