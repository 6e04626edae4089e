//! The reasoning-program language: `query_*(relate(rel, filter_*(concept)))`.
//!
//! Programs are kept in two forms. [`ProgramNode`] is the tree as written;
//! [`ProgramStep`] is its post-order linearization where every step lists the
//! indices of the steps it consumes. The linear form drives both the symbolic
//! executor and the iterative reasoning network.

mod parse;
mod random;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::{Concept, ConceptKind};

pub use parse::parse_program;
pub use random::{random_program, TemplateCell, TemplateSet};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DslError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown concept `{0}`")]
    UnknownConcept(String),
    #[error("concept `{label}` is ambiguous between {kinds:?}; use a typed filter")]
    AmbiguousConcept { label: String, kinds: Vec<ConceptKind> },
    #[error("arity error: {0}")]
    Arity(String),
    #[error("invalid program: {0}")]
    Invalid(String),
    #[error("vocabulary for {0} is empty")]
    EmptyVocabulary(ConceptKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Before,
    After,
    Between,
}

impl Relation {
    pub const ALL: [Relation; 3] = [Relation::Before, Relation::After, Relation::Between];

    pub fn name(self) -> &'static str {
        match self {
            Relation::Before => "before",
            Relation::After => "after",
            Relation::Between => "between",
        }
    }

    pub fn from_name(s: &str) -> Option<Relation> {
        Relation::ALL.into_iter().find(|r| r.name() == s)
    }

    pub fn arity(self) -> usize {
        match self {
            Relation::Between => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    QueryAction,
    QueryDirection,
    QueryBodyPart,
}

impl QuestionType {
    pub const ALL: [QuestionType; 3] = [QuestionType::QueryAction, QuestionType::QueryDirection, QuestionType::QueryBodyPart];

    pub fn name(self) -> &'static str {
        match self {
            QuestionType::QueryAction => "query_action",
            QuestionType::QueryDirection => "query_direction",
            QuestionType::QueryBodyPart => "query_body_part",
        }
    }

    pub fn from_name(s: &str) -> Option<QuestionType> {
        QuestionType::ALL.into_iter().find(|q| q.name() == s)
    }

    /// Kind of concept this question type answers with.
    pub fn answer_kind(self) -> ConceptKind {
        match self {
            QuestionType::QueryAction => ConceptKind::Action,
            QuestionType::QueryDirection => ConceptKind::Direction,
            QuestionType::QueryBodyPart => ConceptKind::BodyPart,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Function kinds of a linearized step. The relation of a `relate` is folded
/// into the function so every step is one symbol plus an optional concept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuncKind {
    FilterAction,
    FilterDirection,
    FilterBodyPart,
    RelateBefore,
    RelateAfter,
    RelateBetween,
    QueryAction,
    QueryDirection,
    QueryBodyPart,
}

impl FuncKind {
    pub const ALL: [FuncKind; 9] = [
        FuncKind::FilterAction,
        FuncKind::FilterDirection,
        FuncKind::FilterBodyPart,
        FuncKind::RelateBefore,
        FuncKind::RelateAfter,
        FuncKind::RelateBetween,
        FuncKind::QueryAction,
        FuncKind::QueryDirection,
        FuncKind::QueryBodyPart,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            FuncKind::FilterAction => "filter_action",
            FuncKind::FilterDirection => "filter_direction",
            FuncKind::FilterBodyPart => "filter_body_part",
            FuncKind::RelateBefore => "relate_before",
            FuncKind::RelateAfter => "relate_after",
            FuncKind::RelateBetween => "relate_between",
            FuncKind::QueryAction => "query_action",
            FuncKind::QueryDirection => "query_direction",
            FuncKind::QueryBodyPart => "query_body_part",
        }
    }

    pub fn filter(kind: ConceptKind) -> FuncKind {
        match kind {
            ConceptKind::Action => FuncKind::FilterAction,
            ConceptKind::Direction => FuncKind::FilterDirection,
            ConceptKind::BodyPart => FuncKind::FilterBodyPart,
        }
    }

    pub fn relate(relation: Relation) -> FuncKind {
        match relation {
            Relation::Before => FuncKind::RelateBefore,
            Relation::After => FuncKind::RelateAfter,
            Relation::Between => FuncKind::RelateBetween,
        }
    }

    pub fn query(qtype: QuestionType) -> FuncKind {
        match qtype {
            QuestionType::QueryAction => FuncKind::QueryAction,
            QuestionType::QueryDirection => FuncKind::QueryDirection,
            QuestionType::QueryBodyPart => FuncKind::QueryBodyPart,
        }
    }
}

impl fmt::Display for FuncKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ProgramNode {
    FilterAction(Concept),
    FilterDirection(Concept),
    FilterBodyPart(Concept),
    Relate(Relation, Vec<ProgramNode>),
    QueryAction(Box<ProgramNode>),
    QueryDirection(Box<ProgramNode>),
    QueryBodyPart(Box<ProgramNode>),
}

impl ProgramNode {
    /// Typed filter for a concept; the variant follows `concept.kind`.
    pub fn filter(concept: Concept) -> ProgramNode {
        match concept.kind {
            ConceptKind::Action => ProgramNode::FilterAction(concept),
            ConceptKind::Direction => ProgramNode::FilterDirection(concept),
            ConceptKind::BodyPart => ProgramNode::FilterBodyPart(concept),
        }
    }

    pub fn query(qtype: QuestionType, child: ProgramNode) -> ProgramNode {
        let child = Box::new(child);
        match qtype {
            QuestionType::QueryAction => ProgramNode::QueryAction(child),
            QuestionType::QueryDirection => ProgramNode::QueryDirection(child),
            QuestionType::QueryBodyPart => ProgramNode::QueryBodyPart(child),
        }
    }

    pub fn func(&self) -> FuncKind {
        match self {
            ProgramNode::FilterAction(_) => FuncKind::FilterAction,
            ProgramNode::FilterDirection(_) => FuncKind::FilterDirection,
            ProgramNode::FilterBodyPart(_) => FuncKind::FilterBodyPart,
            ProgramNode::Relate(r, _) => FuncKind::relate(*r),
            ProgramNode::QueryAction(_) => FuncKind::QueryAction,
            ProgramNode::QueryDirection(_) => FuncKind::QueryDirection,
            ProgramNode::QueryBodyPart(_) => FuncKind::QueryBodyPart,
        }
    }

    pub fn concept(&self) -> Option<&Concept> {
        match self {
            ProgramNode::FilterAction(c) | ProgramNode::FilterDirection(c) | ProgramNode::FilterBodyPart(c) => Some(c),
            _ => None,
        }
    }

    pub fn children(&self) -> Vec<&ProgramNode> {
        match self {
            ProgramNode::FilterAction(_) | ProgramNode::FilterDirection(_) | ProgramNode::FilterBodyPart(_) => vec![],
            ProgramNode::Relate(_, args) => args.iter().collect(),
            ProgramNode::QueryAction(c) | ProgramNode::QueryDirection(c) | ProgramNode::QueryBodyPart(c) => {
                vec![c.as_ref()]
            }
        }
    }

    pub fn question_type(&self) -> Option<QuestionType> {
        match self {
            ProgramNode::QueryAction(_) => Some(QuestionType::QueryAction),
            ProgramNode::QueryDirection(_) => Some(QuestionType::QueryDirection),
            ProgramNode::QueryBodyPart(_) => Some(QuestionType::QueryBodyPart),
            _ => None,
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children().iter().map(|c| c.node_count()).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self.children().iter().map(|c| c.depth()).max().unwrap_or(0)
    }

    fn write_text(&self, out: &mut String) {
        match self {
            ProgramNode::FilterAction(c) | ProgramNode::FilterDirection(c) | ProgramNode::FilterBodyPart(c) => {
                out.push_str(self.func().name());
                out.push('(');
                out.push_str(&c.label);
                out.push(')');
            }
            ProgramNode::Relate(r, args) => {
                out.push_str("relate(");
                out.push_str(r.name());
                for a in args {
                    out.push_str(", ");
                    a.write_text(out);
                }
                out.push(')');
            }
            ProgramNode::QueryAction(c) | ProgramNode::QueryDirection(c) | ProgramNode::QueryBodyPart(c) => {
                out.push_str(self.func().name());
                out.push('(');
                c.write_text(out);
                out.push(')');
            }
        }
    }

    /// Checks the structural invariants of a whole program rooted here.
    fn validate_root(&self) -> Result<QuestionType, DslError> {
        let qtype = self
            .question_type()
            .ok_or_else(|| DslError::Invalid(format!("root must be a query, found {}", self.func())))?;
        if self.depth() < 2 {
            return Err(DslError::Invalid("program depth must be at least 2".into()));
        }
        for child in self.children() {
            child.validate_inner()?;
        }
        Ok(qtype)
    }

    fn validate_inner(&self) -> Result<(), DslError> {
        match self {
            ProgramNode::QueryAction(_) | ProgramNode::QueryDirection(_) | ProgramNode::QueryBodyPart(_) => {
                Err(DslError::Invalid("query may only appear at the root".into()))
            }
            ProgramNode::Relate(r, args) => {
                if args.len() != r.arity() {
                    return Err(DslError::Arity(format!(
                        "relate({}) takes {} argument(s), got {}",
                        r,
                        r.arity(),
                        args.len()
                    )));
                }
                args.iter().try_for_each(|a| a.validate_inner())
            }
            filter => {
                let c = filter.concept().expect("filter carries a concept");
                let expected = match filter {
                    ProgramNode::FilterAction(_) => ConceptKind::Action,
                    ProgramNode::FilterDirection(_) => ConceptKind::Direction,
                    _ => ConceptKind::BodyPart,
                };
                if c.kind != expected {
                    return Err(DslError::Invalid(format!("{} given a {} concept", filter.func(), c.kind)));
                }
                Ok(())
            }
        }
    }
}

/// One post-order step of a program.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProgramStep {
    pub index: usize,
    pub func: FuncKind,
    pub concept: Option<Concept>,
    pub deps: Vec<usize>,
}

/// Post-order linearization; each step's deps are its children's indices.
pub fn linearize(root: &ProgramNode) -> Vec<ProgramStep> {
    fn visit(node: &ProgramNode, steps: &mut Vec<ProgramStep>) -> usize {
        let deps: Vec<usize> = node.children().into_iter().map(|c| visit(c, steps)).collect();
        let index = steps.len();
        steps.push(ProgramStep { index, func: node.func(), concept: node.concept().cloned(), deps });
        index
    }
    let mut steps = Vec::with_capacity(root.node_count());
    visit(root, &mut steps);
    steps
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Program {
    root: ProgramNode,
    steps: Vec<ProgramStep>,
    question_type: QuestionType,
}

impl Program {
    pub fn new(root: ProgramNode) -> Result<Program, DslError> {
        let question_type = root.validate_root()?;
        let steps = linearize(&root);
        Ok(Program { root, steps, question_type })
    }

    pub fn root(&self) -> &ProgramNode {
        &self.root
    }

    pub fn steps(&self) -> &[ProgramStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn question_type(&self) -> QuestionType {
        self.question_type
    }

    /// Canonical text form with typed filters.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        self.root.write_text(&mut out);
        out
    }

    /// Rebuilds the program after replacing the concept or relation of the
    /// step at `index`, keeping the tree shape.
    pub fn with_step_replaced(&self, index: usize, replacement: StepEdit) -> Result<Program, DslError> {
        fn rebuild(node: &ProgramNode, counter: &mut usize, target: usize, edit: &StepEdit) -> ProgramNode {
            let rebuilt = match node {
                ProgramNode::Relate(r, args) => {
                    let args = args.iter().map(|a| rebuild(a, counter, target, edit)).collect();
                    ProgramNode::Relate(*r, args)
                }
                ProgramNode::QueryAction(c) => ProgramNode::QueryAction(Box::new(rebuild(c, counter, target, edit))),
                ProgramNode::QueryDirection(c) => {
                    ProgramNode::QueryDirection(Box::new(rebuild(c, counter, target, edit)))
                }
                ProgramNode::QueryBodyPart(c) => ProgramNode::QueryBodyPart(Box::new(rebuild(c, counter, target, edit))),
                leaf => leaf.clone(),
            };
            let here = *counter;
            *counter += 1;
            if here != target {
                return rebuilt;
            }
            match (edit, rebuilt) {
                (StepEdit::Concept(c), n) if n.concept().is_some() => ProgramNode::filter(c.clone()),
                (StepEdit::Relation(r), ProgramNode::Relate(_, args)) => ProgramNode::Relate(*r, args),
                (_, n) => n,
            }
        }
        let mut counter = 0;
        Program::new(rebuild(&self.root, &mut counter, index, &replacement))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepEdit {
    Concept(Concept),
    Relation(Relation),
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}
