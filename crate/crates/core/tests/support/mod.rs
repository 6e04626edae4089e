//! Shared fixtures and an independent brute-force answer enumerator.
#![allow(dead_code)]

use imore::dataset::template_program;
use imore::dsl::{ProgramNode, QuestionType, Relation};
use imore::model::{AnswerSpace, ImoreModel, LevelId, ModelConfig, MotionWindow, TextVocab};
use imore::motion::{generate_sequence, MotionSequence, SegmentAnnotation, SynthConfig};
use imore::vocab::{Concept, ConceptKind, ConceptVocabulary};
use imore::diff::Scalar;

/// Whether segment `s` carries `concept`, read straight off the annotation.
fn has(s: &SegmentAnnotation, concept: &Concept) -> bool {
    let label = concept.label.as_str();
    match concept.kind {
        ConceptKind::Action => s.action.label == label,
        ConceptKind::Direction => s.direction.as_ref().is_some_and(|d| d.label == label),
        ConceptKind::BodyPart => s.body_parts.iter().any(|b| b.label == label),
    }
}

/// Membership of segment `i` in the set denoted by `node`, by enumerating
/// every segment tuple the node's relation could be anchored on.
fn denotes(node: &ProgramNode, segments: &[SegmentAnnotation], i: usize) -> bool {
    let n = segments.len();
    match node {
        ProgramNode::Relate(Relation::Before, args) => (0..n).any(|t| t == i + 1 && denotes(&args[0], segments, t)),
        ProgramNode::Relate(Relation::After, args) => (0..n).any(|t| t + 1 == i && denotes(&args[0], segments, t)),
        ProgramNode::Relate(Relation::Between, args) => {
            // The anchor pair is the one with the earliest closing segment and,
            // for that closing segment, the latest opening segment before it.
            let mut pairs: Vec<(usize, usize)> = Vec::new();
            for a in 0..n {
                for b in 0..n {
                    if a < b && denotes(&args[0], segments, a) && denotes(&args[1], segments, b) {
                        pairs.push((a, b));
                    }
                }
            }
            pairs.sort_by_key(|&(a, b)| (b, std::cmp::Reverse(a)));
            pairs.first().is_some_and(|&(a, b)| a < i && i < b)
        }
        other => match other.concept() {
            Some(c) => has(&segments[i], c),
            None => false,
        },
    }
}

/// The unique answer, or `None` when the question is empty or ambiguous.
pub fn brute_force_answer(motion: &MotionSequence, root: &ProgramNode) -> Option<String> {
    let qtype = root.question_type()?;
    let body = root.children()[0];
    let hits: Vec<usize> = (0..motion.segments.len()).filter(|&i| denotes(body, &motion.segments, i)).collect();
    if hits.len() != 1 {
        return None;
    }
    let s = &motion.segments[hits[0]];
    match qtype {
        QuestionType::QueryAction => Some(s.action.label.clone()),
        QuestionType::QueryDirection => s.direction.as_ref().map(|d| d.label.clone()),
        QuestionType::QueryBodyPart => Some(s.primary_body_part.label.clone()),
    }
}

pub fn vocab() -> ConceptVocabulary {
    ConceptVocabulary::compact()
}

pub fn answers() -> AnswerSpace {
    let v = vocab();
    AnswerSpace { labels: QuestionType::ALL.into_iter().map(|q| (q, v.labels(q.answer_kind()).to_vec())).collect() }
}

pub fn text_vocab() -> TextVocab {
    TextVocab::build([
        "what does the person do before they walk?",
        "which direction does the person move after they kick?",
        "what body part is used between the wave and the jump?",
    ])
}

/// A small config: 2 blocks, three pool levels.
pub fn small_config(d: usize, window: usize, patch: usize) -> ModelConfig {
    ModelConfig {
        window,
        patch,
        d,
        blocks: 2,
        heads: 2,
        levels: vec![LevelId::Block(0), LevelId::Block(1), LevelId::Final],
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

pub fn model<T: Scalar>(config: ModelConfig, seed: u64) -> ImoreModel<T> {
    ImoreModel::new(config, vocab(), text_vocab(), answers(), seed).unwrap()
}

/// Four 16-frame segments over the compact vocabulary.
pub fn motion(seed: u64) -> MotionSequence {
    let cfg = SynthConfig {
        segments_per_seq: 4,
        min_segment_frames: 16,
        max_segment_frames: 16,
        vocab: vocab(),
        ..SynthConfig::default()
    };
    let mut m = generate_sequence(seed, &cfg).unwrap();
    m.id = format!("m{seed}");
    m
}

pub fn window(motion: &MotionSequence, start: usize, len: usize) -> MotionWindow {
    let frames = (start..start + len).flat_map(|f| motion.frame(f % motion.num_frames()).to_vec()).collect();
    MotionWindow { frames, start }
}

pub fn act(label: &str) -> Concept {
    Concept::new(ConceptKind::Action, label)
}

pub fn dir(label: &str) -> Concept {
    Concept::new(ConceptKind::Direction, label)
}

/// `query_direction(relate(before, filter_action(walk)))`: filter, relate, query.
pub fn before_program() -> imore::dsl::Program {
    template_program(QuestionType::QueryDirection, Some(Relation::Before), &[act("walk")])
}

/// `query_body_part(relate(between, filter_action(wave), filter_action(jump)))`: four steps.
pub fn between_program() -> imore::dsl::Program {
    template_program(QuestionType::QueryBodyPart, Some(Relation::Between), &[act("wave"), act("jump")])
}
