//! Adapter for externally produced question files (one JSON object per
//! line with `motion_ref`, `question`, `program_text`, `answer`, `split`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{io_err, DatasetError, DatasetManifest, QAExample, Split};
use crate::dsl::parse_program;
use crate::vocab::ConceptVocabulary;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalRecord {
    pub motion_ref: String,
    pub question: String,
    pub program_text: String,
    pub answer: String,
    pub split: String,
}

/// Records that failed validation, by 1-based line number.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImportReport {
    pub imported: usize,
    pub skipped: Vec<(usize, String)>,
}

fn validate(record: ExternalRecord, id: String, vocab: &ConceptVocabulary) -> Result<QAExample, String> {
    let program = parse_program(&record.program_text, vocab).map_err(|e| format!("program: {e}"))?;
    let qtype = program.question_type();
    let answer = vocab
        .concept(qtype.answer_kind(), &record.answer)
        .ok_or_else(|| format!("answer `{}` is not a {} label", record.answer, qtype.answer_kind()))?;
    let split = Split::from_name(&record.split).ok_or_else(|| format!("unknown split `{}`", record.split))?;
    Ok(QAExample {
        id,
        motion_id: record.motion_ref,
        question: record.question,
        question_type: qtype,
        program,
        answer,
        split,
    })
}

pub fn import_external(path: &Path, vocab: &ConceptVocabulary) -> Result<(DatasetManifest, ImportReport), DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut report = ImportReport::default();
    let mut examples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ExternalRecord = serde_json::from_str(line)
            .map_err(|e| DatasetError::Schema(format!("{} line {}: {e}", path.display(), i + 1)))?;
        match validate(record, format!("x{:06}", i), vocab) {
            Ok(e) => examples.push(e),
            Err(reason) => report.skipped.push((i + 1, reason)),
        }
    }
    report.imported = examples.len();
    let mut hasher = Sha256::new();
    for e in &examples {
        hasher.update(serde_json::to_string(&e.to_record()).expect("record serializes").as_bytes());
    }
    let hash: String = hasher.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect();
    Ok((DatasetManifest::new(examples, vocab.clone(), 0, hash), report))
}

/// Writes the manifest in the external schema, one record per example.
pub fn export_external(manifest: &DatasetManifest, path: &Path) -> Result<(), DatasetError> {
    let mut out = String::new();
    for e in &manifest.examples {
        let record = ExternalRecord {
            motion_ref: e.motion_id.clone(),
            question: e.question.clone(),
            program_text: e.program.to_text(),
            answer: e.answer.label.clone(),
            split: e.split.name().to_string(),
        };
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}
