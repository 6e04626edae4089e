//! Explicit program execution over ground-truth segment annotations.
//!
//! Relations use immediate adjacency: `before` of segment k is k-1, `after`
//! is k+1. Queries only answer from a single segment; anything else is an
//! error, so ambiguity has to be resolved when questions are generated.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{FuncKind, Program, QuestionType, Relation};
use crate::motion::{MotionSequence, SegmentAnnotation};
use crate::vocab::{Concept, ConceptKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExecError {
    #[error("query over an empty segment set")]
    EmptyResult,
    #[error("query over {0} segments is ambiguous")]
    AmbiguousResult(usize),
    #[error("segment {0} has no {1} attribute")]
    MissingAttribute(usize, ConceptKind),
    #[error("malformed step {0}")]
    Malformed(usize),
}

/// Sorted, deduplicated segment indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SegmentSet(BTreeSet<usize>);

impl SegmentSet {
    pub fn new(indices: impl IntoIterator<Item = usize>) -> Self {
        SegmentSet(indices.into_iter().collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.contains(&i)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.iter().collect()
    }
}

pub fn exec_filter(segments: &[SegmentAnnotation], concept: &Concept) -> SegmentSet {
    SegmentSet::new(segments.iter().enumerate().filter(|(_, s)| s.matches(concept)).map(|(i, _)| i))
}

/// `args` must have the relation's arity; out-of-range neighbours vanish.
pub fn exec_relate(num_segments: usize, relation: Relation, args: &[&SegmentSet]) -> SegmentSet {
    match relation {
        Relation::Before => SegmentSet::new(args[0].iter().filter(|&i| i > 0).map(|i| i - 1)),
        Relation::After => SegmentSet::new(args[0].iter().map(|i| i + 1).filter(|&i| i < num_segments)),
        Relation::Between => {
            let (first, second) = (args[0], args[1]);
            let earliest = second.iter().find_map(|b| first.iter().filter(|&a| a < b).max().map(|a| (a, b)));
            match earliest {
                Some((a, b)) => SegmentSet::new(a + 1..b),
                None => SegmentSet::default(),
            }
        }
    }
}

/// Attribute answered by a question type for one segment.
pub fn segment_attribute(segment: &SegmentAnnotation, qtype: QuestionType) -> Option<&Concept> {
    match qtype {
        QuestionType::QueryAction => Some(&segment.action),
        QuestionType::QueryDirection => segment.direction.as_ref(),
        QuestionType::QueryBodyPart => Some(&segment.primary_body_part),
    }
}

pub fn exec_query(segments: &[SegmentAnnotation], qtype: QuestionType, set: &SegmentSet) -> Result<Concept, ExecError> {
    match set.len() {
        0 => Err(ExecError::EmptyResult),
        1 => {
            let i = set.iter().next().expect("one element");
            segment_attribute(&segments[i], qtype)
                .cloned()
                .ok_or(ExecError::MissingAttribute(i, qtype.answer_kind()))
        }
        n => Err(ExecError::AmbiguousResult(n)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub func: FuncKind,
    pub concept: Option<String>,
    pub output: Vec<usize>,
}

/// Every intermediate value of one execution, plus the answer or the error.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecTrace {
    pub steps: Vec<TraceStep>,
    pub answer: Option<String>,
    pub error: Option<String>,
}

impl ExecTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

/// Runs the program and returns the answer together with the trace.
/// The trace holds one set per step; the query step records the set it
/// answered from.
pub fn execute_traced(motion: &MotionSequence, program: &Program) -> (Result<Concept, ExecError>, ExecTrace) {
    let segments = &motion.segments;
    let mut values: Vec<SegmentSet> = Vec::with_capacity(program.len());
    let mut trace = ExecTrace { steps: Vec::with_capacity(program.len()), answer: None, error: None };
    let mut result = Err(ExecError::Malformed(0));
    for step in program.steps() {
        let dep = |k: usize| step.deps.get(k).map(|&d| &values[d]);
        let out = match step.func {
            FuncKind::FilterAction | FuncKind::FilterDirection | FuncKind::FilterBodyPart => match &step.concept {
                Some(c) => exec_filter(segments, c),
                None => {
                    result = Err(ExecError::Malformed(step.index));
                    break;
                }
            },
            FuncKind::RelateBefore | FuncKind::RelateAfter | FuncKind::RelateBetween => {
                let relation = match step.func {
                    FuncKind::RelateBefore => Relation::Before,
                    FuncKind::RelateAfter => Relation::After,
                    _ => Relation::Between,
                };
                let args: Option<Vec<&SegmentSet>> = (0..relation.arity()).map(dep).collect();
                match args {
                    Some(args) => exec_relate(segments.len(), relation, &args),
                    None => {
                        result = Err(ExecError::Malformed(step.index));
                        break;
                    }
                }
            }
            FuncKind::QueryAction | FuncKind::QueryDirection | FuncKind::QueryBodyPart => {
                let Some(input) = dep(0) else {
                    result = Err(ExecError::Malformed(step.index));
                    break;
                };
                result = exec_query(segments, program.question_type(), input);
                input.clone()
            }
        };
        trace.steps.push(TraceStep {
            step: step.index,
            func: step.func,
            concept: step.concept.as_ref().map(|c| c.label.clone()),
            output: out.to_vec(),
        });
        values.push(out);
    }
    match &result {
        Ok(c) => trace.answer = Some(c.label.clone()),
        Err(e) => trace.error = Some(e.to_string()),
    }
    (result, trace)
}

pub fn execute(motion: &MotionSequence, program: &Program) -> Result<Concept, ExecError> {
    execute_traced(motion, program).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_program;
    use crate::vocab::ConceptVocabulary;

    fn seg(i: usize, action: &str, dir: Option<&str>, parts: &[&str]) -> SegmentAnnotation {
        SegmentAnnotation {
            start_frame: i * 10,
            end_frame: i * 10 + 10,
            action: Concept::new(ConceptKind::Action, action),
            direction: dir.map(|d| Concept::new(ConceptKind::Direction, d)),
            body_parts: parts.iter().map(|p| Concept::new(ConceptKind::BodyPart, *p)).collect(),
            primary_body_part: Concept::new(ConceptKind::BodyPart, parts[0]),
        }
    }

    fn motion(segments: Vec<SegmentAnnotation>) -> MotionSequence {
        let t = segments.last().unwrap().end_frame;
        MotionSequence { id: "test".into(), num_joints: 17, frames: vec![0.0; t * 17 * 3], segments }
    }

    fn walk_squat_pickup() -> MotionSequence {
        motion(vec![
            seg(0, "walk", Some("forward"), &["left_leg", "right_leg"]),
            seg(1, "squat", Some("down"), &["torso", "left_leg"]),
            seg(2, "pick_up", Some("down"), &["right_hand", "torso"]),
        ])
    }

    #[test]
    fn filters() {
        let m = walk_squat_pickup();
        assert_eq!(exec_filter(&m.segments, &Concept::new(ConceptKind::Action, "squat")), SegmentSet::new([1]));
        assert!(exec_filter(&m.segments, &Concept::new(ConceptKind::Direction, "left")).is_empty());
        assert_eq!(exec_filter(&m.segments, &Concept::new(ConceptKind::BodyPart, "torso")), SegmentSet::new([1, 2]));
        assert_eq!(exec_filter(&m.segments, &Concept::new(ConceptKind::BodyPart, "right_hand")), SegmentSet::new([2]));
    }

    #[test]
    fn relations() {
        assert_eq!(exec_relate(3, Relation::Before, &[&SegmentSet::new([2])]), SegmentSet::new([1]));
        assert!(exec_relate(3, Relation::After, &[&SegmentSet::new([2])]).is_empty());
        assert!(exec_relate(3, Relation::Before, &[&SegmentSet::new([0])]).is_empty());
        assert_eq!(exec_relate(3, Relation::Between, &[&SegmentSet::new([0]), &SegmentSet::new([2])]), SegmentSet::new([1]));
        assert_eq!(
            exec_relate(6, Relation::Between, &[&SegmentSet::new([0, 1, 4]), &SegmentSet::new([3, 5])]),
            SegmentSet::new([2])
        );
        assert!(exec_relate(3, Relation::Between, &[&SegmentSet::new([2]), &SegmentSet::new([0])]).is_empty());
    }

    #[test]
    fn queries() {
        let m = walk_squat_pickup();
        let q = |t, s: &[usize]| exec_query(&m.segments, t, &SegmentSet::new(s.iter().copied()));
        assert_eq!(q(QuestionType::QueryAction, &[1]).unwrap().label, "squat");
        assert_eq!(q(QuestionType::QueryDirection, &[]), Err(ExecError::EmptyResult));
        assert_eq!(q(QuestionType::QueryBodyPart, &[2]).unwrap().label, "right_hand");
        assert_eq!(q(QuestionType::QueryAction, &[0, 1]), Err(ExecError::AmbiguousResult(2)));
    }

    #[test]
    fn executes_figure_example_with_trace() {
        let m = walk_squat_pickup();
        let v = ConceptVocabulary::full();
        let p = parse_program("query_action(relate(before, filter_action(pick_up)))", &v).unwrap();
        let (answer, trace) = execute_traced(&m, &p);
        assert_eq!(answer.unwrap().label, "squat");
        assert_eq!(trace.steps.len(), p.len());
        assert_eq!(trace.steps[0].output, vec![2]);
        assert_eq!(trace.steps[1].output, vec![1]);
        assert_eq!(trace.answer.as_deref(), Some("squat"));
    }

    #[test]
    fn before_left_answers_predecessor() {
        let m = motion(vec![
            seg(0, "walk", Some("forward"), &["left_leg"]),
            seg(1, "jump", Some("up"), &["torso"]),
            seg(2, "step", Some("left"), &["left_foot"]),
            seg(3, "nod", Some("down"), &["head"]),
        ]);
        let v = ConceptVocabulary::full();
        let p = parse_program("query_action(relate(before, filter(left)))", &v).unwrap();
        assert_eq!(execute(&m, &p).unwrap().label, "jump");
        let absent = parse_program("query_action(relate(before, filter(right)))", &v).unwrap();
        assert_eq!(execute(&m, &absent), Err(ExecError::EmptyResult));
    }

    #[test]
    fn missing_direction_is_reported() {
        let m = motion(vec![seg(0, "walk", Some("forward"), &["left_leg"]), seg(1, "wave", None, &["left_hand"])]);
        let v = ConceptVocabulary::full();
        let p = parse_program("query_direction(relate(after, filter(walk)))", &v).unwrap();
        assert_eq!(execute(&m, &p), Err(ExecError::MissingAttribute(1, ConceptKind::Direction)));
    }

    #[test]
    fn filters_ignore_frame_data() {
        let mut m = walk_squat_pickup();
        let c = Concept::new(ConceptKind::BodyPart, "torso");
        let before = exec_filter(&m.segments, &c);
        m.frames.iter_mut().for_each(|f| *f = 42.0);
        assert_eq!(exec_filter(&m.segments, &c), before);
    }
}
