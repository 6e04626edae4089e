//! Question/program/answer datasets over annotated motions.

mod corrupt;
mod external;
mod generate;
mod render;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{parse_program, DslError, Program, QuestionType};
use crate::motion::{read_motion, MotionError, MotionSequence};
use crate::oracle::execute;
use crate::vocab::{Concept, ConceptVocabulary};

pub use corrupt::{corrupt_program, corrupt_program_traced, Corruption};
pub use external::{export_external, import_external, ExternalRecord, ImportReport};
pub use generate::{generate_dataset, AmbiguityPolicy, GenConfig};
pub use render::{
    base_phrase, gerund_phrase, render_question, template_parts, template_program, PredictError, QuestionGrammar,
};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("quota unreachable: {0}")]
    QuotaUnreachable(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("program error in {id}: {source}")]
    Program { id: String, source: DslError },
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn from_name(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|x| x.name() == s)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// FNV-1a followed by a splitmix finalizer; stable across platforms.
pub(crate) fn stable_hash(text: &str, salt: u64) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325 ^ salt;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58476d1ce4e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d049bb133111eb);
    h ^ (h >> 31)
}

/// Stable split assignment from the motion id alone.
pub fn split_for_motion(motion_id: &str, ratios: [f64; 3]) -> Split {
    let h = stable_hash(motion_id, 0);
    let total: f64 = ratios.iter().sum();
    let u = (h >> 11) as f64 / (1u64 << 53) as f64 * total;
    if u < ratios[0] {
        Split::Train
    } else if u < ratios[0] + ratios[1] {
        Split::Val
    } else {
        Split::Test
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QAExample {
    pub id: String,
    pub motion_id: String,
    pub question: String,
    pub question_type: QuestionType,
    pub program: Program,
    pub answer: Concept,
    pub split: Split,
}

/// One line of `dataset.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleRecord {
    pub id: String,
    pub motion_id: String,
    pub question: String,
    pub question_type: QuestionType,
    pub program: String,
    pub answer: String,
    pub split: Split,
}

impl QAExample {
    pub fn to_record(&self) -> ExampleRecord {
        ExampleRecord {
            id: self.id.clone(),
            motion_id: self.motion_id.clone(),
            question: self.question.clone(),
            question_type: self.question_type,
            program: self.program.to_text(),
            answer: self.answer.label.clone(),
            split: self.split,
        }
    }

    pub fn from_record(r: ExampleRecord, vocab: &ConceptVocabulary) -> Result<QAExample, DatasetError> {
        let program =
            parse_program(&r.program, vocab).map_err(|source| DatasetError::Program { id: r.id.clone(), source })?;
        if program.question_type() != r.question_type {
            return Err(DatasetError::Schema(format!("{}: question_type disagrees with program root", r.id)));
        }
        let answer = vocab
            .concept(r.question_type.answer_kind(), &r.answer)
            .ok_or_else(|| DatasetError::Schema(format!("{}: answer `{}` not in vocabulary", r.id, r.answer)))?;
        Ok(QAExample {
            id: r.id,
            motion_id: r.motion_id,
            question: r.question,
            question_type: r.question_type,
            program,
            answer,
            split: r.split,
        })
    }
}

/// Dataset-level metadata stored in `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestMeta {
    pub vocab: ConceptVocabulary,
    pub answer_labels: BTreeMap<QuestionType, Vec<String>>,
    pub split_counts: BTreeMap<Split, usize>,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub examples: Vec<QAExample>,
    pub meta: ManifestMeta,
}

impl DatasetManifest {
    /// Builds the manifest, deriving answer labels from the train split.
    pub fn new(examples: Vec<QAExample>, vocab: ConceptVocabulary, seed: u64, config_hash: String) -> Self {
        let mut answer_labels: BTreeMap<QuestionType, BTreeSet<String>> =
            QuestionType::ALL.into_iter().map(|q| (q, BTreeSet::new())).collect();
        let mut split_counts: BTreeMap<Split, usize> = Split::ALL.into_iter().map(|s| (s, 0)).collect();
        for e in &examples {
            *split_counts.get_mut(&e.split).expect("all splits present") += 1;
            if e.split == Split::Train {
                answer_labels.get_mut(&e.question_type).expect("all types").insert(e.answer.label.clone());
            }
        }
        let answer_labels = answer_labels.into_iter().map(|(q, s)| (q, s.into_iter().collect())).collect();
        DatasetManifest { examples, meta: ManifestMeta { vocab, answer_labels, split_counts, seed, config_hash } }
    }

    pub fn vocab(&self) -> &ConceptVocabulary {
        &self.meta.vocab
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &QAExample> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn answer_labels(&self, qtype: QuestionType) -> &[String] {
        self.meta.answer_labels.get(&qtype).map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Checks every dataset invariant against the motions; returns one
    /// message per violation.
    pub fn violations(&self, motions: &HashMap<String, MotionSequence>) -> Vec<String> {
        let mut out = Vec::new();
        let mut split_of_motion: HashMap<&str, Split> = HashMap::new();
        for e in &self.examples {
            if e.answer.kind != e.question_type.answer_kind() {
                out.push(format!("{}: answer kind {} for {}", e.id, e.answer.kind, e.question_type));
            }
            if e.program.question_type() != e.question_type {
                out.push(format!("{}: program type differs from question type", e.id));
            }
            match motions.get(&e.motion_id) {
                None => out.push(format!("{}: missing motion {}", e.id, e.motion_id)),
                Some(m) => match execute(m, &e.program) {
                    Ok(a) if a == e.answer => {}
                    Ok(a) => out.push(format!("{}: oracle answers {} but stored {}", e.id, a.label, e.answer.label)),
                    Err(err) => out.push(format!("{}: oracle failed: {err}", e.id)),
                },
            }
            match split_of_motion.insert(e.motion_id.as_str(), e.split) {
                Some(s) if s != e.split => out.push(format!("motion {} appears in {} and {}", e.motion_id, s, e.split)),
                _ => {}
            }
            if !self.answer_labels(e.question_type).contains(&e.answer.label) {
                out.push(format!("{}: answer {} never occurs in train", e.id, e.answer.label));
            }
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<(), DatasetError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut lines = String::new();
        for e in &self.examples {
            lines.push_str(&serde_json::to_string(&e.to_record()).expect("record serializes"));
            lines.push('\n');
        }
        let data = dir.join("dataset.jsonl");
        fs::write(&data, lines).map_err(io_err(&data))?;
        let meta = dir.join("manifest.json");
        fs::write(&meta, serde_json::to_string_pretty(&self.meta).expect("meta serializes")).map_err(io_err(&meta))
    }

    pub fn read(dir: &Path) -> Result<DatasetManifest, DatasetError> {
        let meta_path = dir.join("manifest.json");
        let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        let meta: ManifestMeta =
            serde_json::from_str(&text).map_err(|e| DatasetError::Schema(format!("{}: {e}", meta_path.display())))?;
        let data = dir.join("dataset.jsonl");
        let text = fs::read_to_string(&data).map_err(io_err(&data))?;
        let mut examples = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let record: ExampleRecord = serde_json::from_str(line)
                .map_err(|e| DatasetError::Schema(format!("{} line {}: {e}", data.display(), i + 1)))?;
            examples.push(QAExample::from_record(record, &meta.vocab)?);
        }
        Ok(DatasetManifest { examples, meta })
    }
}

pub fn motion_path(dir: &Path, motion_id: &str) -> std::path::PathBuf {
    dir.join("motions").join(format!("{motion_id}.imom"))
}

/// Loads every motion referenced by the manifest from `dir/motions`.
pub fn load_motions(dir: &Path, manifest: &DatasetManifest) -> Result<HashMap<String, MotionSequence>, DatasetError> {
    let ids: BTreeSet<&str> = manifest.examples.iter().map(|e| e.motion_id.as_str()).collect();
    let mut out = HashMap::with_capacity(ids.len());
    for id in ids {
        out.insert(id.to_string(), read_motion(&motion_path(dir, id))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_ratios_are_respected() {
        let ratios = [0.7, 0.15, 0.15];
        let mut counts = BTreeMap::new();
        for i in 0..10_000 {
            *counts.entry(split_for_motion(&format!("m{i:06}"), ratios)).or_insert(0usize) += 1;
        }
        let train = counts[&Split::Train] as f64 / 10_000.0;
        let val = counts[&Split::Val] as f64 / 10_000.0;
        assert!((train - 0.7).abs() < 0.02, "{train}");
        assert!((val - 0.15).abs() < 0.02, "{val}");
        assert_eq!(split_for_motion("abc", ratios), split_for_motion("abc", ratios));
    }
}
