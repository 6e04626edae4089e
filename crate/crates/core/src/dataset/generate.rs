use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::render::{render_question, template_program};
use super::{split_for_motion, DatasetError, DatasetManifest, QAExample, Split};
use crate::dsl::{QuestionType, Relation, TemplateCell};
use crate::motion::MotionSequence;
use crate::oracle::{exec_filter, execute};
use crate::vocab::{Concept, ConceptKind, ConceptVocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmbiguityPolicy {
    /// Keep a candidate whenever the oracle returns a unique answer.
    Discard,
    /// Additionally require every filter to select exactly one segment.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    /// Questions per question type, spread evenly over its relations.
    pub per_type_quota: usize,
    /// Overrides keyed `"<question_type>/<relation>"`, e.g.
    /// `"query_direction/between" = 0`.
    pub cell_quota: BTreeMap<String, usize>,
    pub relations: Vec<Relation>,
    pub filter_kinds: Vec<ConceptKind>,
    pub ambiguity_policy: AmbiguityPolicy,
    /// Train / val / test ratios.
    pub split_ratios: [f64; 3],
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            per_type_quota: 120,
            cell_quota: BTreeMap::new(),
            relations: Relation::ALL.to_vec(),
            filter_kinds: ConceptKind::ALL.to_vec(),
            ambiguity_policy: AmbiguityPolicy::Discard,
            split_ratios: [0.7, 0.15, 0.15],
        }
    }
}

impl GenConfig {
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    fn cell_key(cell: TemplateCell) -> String {
        format!("{}/{}", cell.qtype.name(), cell.relation.map_or("none", |r| r.name()))
    }

    fn quotas(&self) -> Vec<(TemplateCell, usize)> {
        let mut out = Vec::new();
        for qtype in QuestionType::ALL {
            let n = self.relations.len().max(1);
            for (i, &relation) in self.relations.iter().enumerate() {
                let cell = TemplateCell { qtype, relation: Some(relation) };
                let even = self.per_type_quota / n + usize::from(i < self.per_type_quota % n);
                let q = self.cell_quota.get(&Self::cell_key(cell)).copied().unwrap_or(even);
                out.push((cell, q));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    motion: usize,
    cell: TemplateCell,
    anchors: Vec<Concept>,
    answer: Concept,
    split: Split,
}

fn motion_concepts(motion: &MotionSequence, kinds: &[ConceptKind]) -> Vec<Concept> {
    let mut set = BTreeSet::new();
    for s in &motion.segments {
        if kinds.contains(&ConceptKind::Action) {
            set.insert(s.action.clone());
        }
        if kinds.contains(&ConceptKind::Direction) {
            if let Some(d) = &s.direction {
                set.insert(d.clone());
            }
        }
        if kinds.contains(&ConceptKind::BodyPart) {
            set.extend(s.body_parts.iter().cloned());
        }
    }
    set.into_iter().collect()
}

/// Builds the example for one template cell and anchor set if the oracle
/// answers it under `policy`.
pub(super) fn try_candidate(
    motion: &MotionSequence,
    qtype: QuestionType,
    relation: Relation,
    anchors: &[Concept],
    policy: AmbiguityPolicy,
) -> Option<Concept> {
    if policy == AmbiguityPolicy::Strict && anchors.iter().any(|a| exec_filter(&motion.segments, a).len() != 1) {
        return None;
    }
    execute(motion, &template_program(qtype, Some(relation), anchors)).ok()
}

fn candidates(motion_idx: usize, motion: &MotionSequence, config: &GenConfig, cells: &[TemplateCell]) -> Vec<Candidate> {
    let concepts = motion_concepts(motion, &config.filter_kinds);
    let split = split_for_motion(&motion.id, config.split_ratios);
    let mut out = Vec::new();
    for &cell in cells {
        let relation = cell.relation.expect("generated cells are relational");
        let anchor_sets: Vec<Vec<Concept>> = if relation.arity() == 2 {
            concepts
                .iter()
                .flat_map(|a| concepts.iter().filter(move |b| *b != a).map(move |b| vec![a.clone(), b.clone()]))
                .collect()
        } else {
            concepts.iter().map(|a| vec![a.clone()]).collect()
        };
        for anchors in anchor_sets {
            if let Some(answer) = try_candidate(motion, cell.qtype, relation, &anchors, config.ambiguity_policy) {
                out.push(Candidate { motion: motion_idx, cell, anchors, answer, split });
            }
        }
    }
    out
}

/// Generates a manifest whose every example the oracle answers uniquely.
///
/// Candidates are every (cell, anchors) combination over the concepts present
/// in a motion. Selection is a seeded shuffle per cell; validation or test
/// examples whose answer never occurs in train are swapped for other
/// candidates of the same cell.
pub fn generate_dataset(motions: &[MotionSequence], seed: u64, config: &GenConfig) -> Result<DatasetManifest, DatasetError> {
    if let Some(m) = motions.iter().find(|m| m.segments.len() < 2) {
        return Err(DatasetError::Invariant(format!("motion {} has fewer than 2 segments", m.id)));
    }
    let quotas = config.quotas();
    let cells: Vec<TemplateCell> = quotas.iter().filter(|(_, q)| *q > 0).map(|(c, _)| *c).collect();
    let mut pools: BTreeMap<TemplateCell, Vec<Candidate>> = BTreeMap::new();
    for (i, m) in motions.iter().enumerate() {
        for c in candidates(i, m, config, &cells) {
            pools.entry(c.cell).or_default().push(c);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected: Vec<(TemplateCell, Vec<Candidate>, VecDeque<Candidate>)> = Vec::new();
    let mut shortfalls = Vec::new();
    for &(cell, quota) in &quotas {
        if quota == 0 {
            continue;
        }
        let mut pool = pools.remove(&cell).unwrap_or_default();
        pool.shuffle(&mut rng);
        if pool.len() < quota {
            shortfalls.push(format!("{}: {}/{}", GenConfig::cell_key(cell), pool.len(), quota));
        }
        let rest: VecDeque<Candidate> = pool.split_off(quota.min(pool.len())).into();
        selected.push((cell, pool, rest));
    }
    if !shortfalls.is_empty() {
        return Err(DatasetError::QuotaUnreachable(shortfalls.join(", ")));
    }

    loop {
        let covered: BTreeSet<(QuestionType, String)> = selected
            .iter()
            .flat_map(|(_, chosen, _)| chosen.iter())
            .filter(|c| c.split == Split::Train)
            .map(|c| (c.cell.qtype, c.answer.label.clone()))
            .collect();
        let mut changed = false;
        for (cell, chosen, rest) in selected.iter_mut() {
            for slot in chosen.iter_mut() {
                if slot.split == Split::Train || covered.contains(&(cell.qtype, slot.answer.label.clone())) {
                    continue;
                }
                let pos = rest
                    .iter()
                    .position(|c| c.split == Split::Train || covered.contains(&(cell.qtype, c.answer.label.clone())))
                    .ok_or_else(|| {
                        DatasetError::QuotaUnreachable(format!(
                            "{}: answer {} has no train example and no replacement candidate remains",
                            GenConfig::cell_key(*cell),
                            slot.answer.label
                        ))
                    })?;
                *slot = rest.remove(pos).expect("position is valid");
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut examples = Vec::new();
    for (cell, chosen, _) in selected {
        for c in chosen {
            let motion = &motions[c.motion];
            examples.push(QAExample {
                id: format!("q{:06}", examples.len()),
                motion_id: motion.id.clone(),
                question: render_question(cell.qtype, cell.relation, &c.anchors),
                question_type: cell.qtype,
                program: template_program(cell.qtype, cell.relation, &c.anchors),
                answer: c.answer,
                split: c.split,
            });
        }
    }
    let vocab = vocab_for(motions);
    Ok(DatasetManifest::new(examples, vocab, seed, config.hash()))
}

/// The default vocabulary if it covers every label used by the motions,
/// otherwise the labels actually present.
fn vocab_for(motions: &[MotionSequence]) -> ConceptVocabulary {
    let full = ConceptVocabulary::full();
    let mut used: BTreeMap<ConceptKind, BTreeSet<String>> = BTreeMap::new();
    for c in motions.iter().flat_map(|m| motion_concepts(m, &ConceptKind::ALL)) {
        used.entry(c.kind).or_default().insert(c.label);
    }
    if used.iter().all(|(k, labels)| labels.iter().all(|l| full.contains(*k, l))) {
        return full;
    }
    let take = |k: ConceptKind| used.get(&k).map(|s| s.iter().cloned().collect()).unwrap_or_default();
    ConceptVocabulary::new(take(ConceptKind::Action), take(ConceptKind::Direction), take(ConceptKind::BodyPart))
}
