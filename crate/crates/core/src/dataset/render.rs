//! Question templates and their inverse.

use std::collections::HashMap;

use thiserror::Error;

use crate::dsl::{Program, ProgramNode, QuestionType, Relation};
use crate::vocab::{Concept, ConceptKind, ConceptVocabulary};

/// Salt mixed into the template-variant hash.
const VARIANT_SALT: u64 = 20;

fn prefixes(qtype: QuestionType) -> [&'static str; 2] {
    match qtype {
        QuestionType::QueryAction => ["What action does the person do", "What does the person do"],
        QuestionType::QueryDirection => ["Which direction does the person move", "In which direction does the person go"],
        QuestionType::QueryBodyPart => ["What body part does the person use", "Which body part does the person move"],
    }
}

/// Verb phrase used after "they", e.g. "pick up" / "move left".
pub fn base_phrase(concept: &Concept) -> String {
    let words = concept.label.replace('_', " ");
    match concept.kind {
        ConceptKind::Action => match concept.label.as_str() {
            "sit" => "sit down".into(),
            "stand" => "stand up".into(),
            "raise_arm" => "raise their arm".into(),
            _ => words,
        },
        ConceptKind::Direction => format!("move {words}"),
        ConceptKind::BodyPart => format!("use their {words}"),
    }
}

/// Gerund phrase used in "between X and Y".
pub fn gerund_phrase(concept: &Concept) -> String {
    let base = base_phrase(concept);
    let (verb, rest) = match base.split_once(' ') {
        Some((v, r)) => (v.to_string(), format!(" {r}")),
        None => (base.clone(), String::new()),
    };
    format!("{}{rest}", gerund(&verb))
}

fn gerund(verb: &str) -> String {
    const DOUBLED: [&str; 5] = ["sit", "nod", "step", "squat", "get"];
    if DOUBLED.contains(&verb) {
        let last = verb.chars().last().expect("non-empty verb");
        format!("{verb}{last}ing")
    } else if let Some(stem) = verb.strip_suffix('e').filter(|s| !s.ends_with('e')) {
        format!("{stem}ing")
    } else {
        format!("{verb}ing")
    }
}

fn variant(qtype: QuestionType, relation: Option<Relation>, anchors: &[Concept]) -> usize {
    let mut key = format!("{}|{}", qtype.name(), relation.map_or("none", |r| r.name()));
    for a in anchors {
        key.push('|');
        key.push_str(&a.label);
    }
    (super::stable_hash(&key, VARIANT_SALT) % 2) as usize
}

/// Renders a question. `anchors` must hold one concept, or two for `between`.
pub fn render_question(qtype: QuestionType, relation: Option<Relation>, anchors: &[Concept]) -> String {
    let prefix = prefixes(qtype)[variant(qtype, relation, anchors)];
    match relation {
        Some(Relation::Between) => {
            format!("{prefix} between {} and {}?", gerund_phrase(&anchors[0]), gerund_phrase(&anchors[1]))
        }
        Some(r) => format!("{prefix} {} they {}?", r.name(), base_phrase(&anchors[0])),
        None => format!("{prefix} while they {}?", base_phrase(&anchors[0])),
    }
}

/// Relation and anchors of a template-shaped program, if it has that shape.
pub fn template_parts(program: &Program) -> Option<(Option<Relation>, Vec<Concept>)> {
    let child = match program.root() {
        ProgramNode::QueryAction(c) | ProgramNode::QueryDirection(c) | ProgramNode::QueryBodyPart(c) => c.as_ref(),
        _ => return None,
    };
    match child {
        ProgramNode::Relate(r, args) => {
            let anchors: Option<Vec<Concept>> = args.iter().map(|a| a.concept().cloned()).collect();
            anchors.map(|a| (Some(*r), a))
        }
        leaf => leaf.concept().map(|c| (None, vec![c.clone()])),
    }
}

pub fn template_program(qtype: QuestionType, relation: Option<Relation>, anchors: &[Concept]) -> Program {
    let body = match relation {
        Some(r) => ProgramNode::Relate(r, anchors.iter().cloned().map(ProgramNode::filter).collect()),
        None => ProgramNode::filter(anchors[0].clone()),
    };
    Program::new(ProgramNode::query(qtype, body)).expect("template programs are well formed")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictError {
    /// The question does not match any template. `nearest` is a best-effort
    /// guess from the closest template and any concept phrases found.
    #[error("question does not match any template")]
    UnparsableQuestion { nearest: Option<Program> },
    #[error("phrase `{0}` maps to more than one concept")]
    PhraseCollision(String),
}

/// Inverts [`render_question`] for a vocabulary.
#[derive(Debug, Clone)]
pub struct QuestionGrammar {
    base: HashMap<String, Concept>,
    gerund: HashMap<String, Concept>,
}

impl QuestionGrammar {
    pub fn new(vocab: &ConceptVocabulary) -> Result<Self, PredictError> {
        let mut base = HashMap::new();
        let mut gerund = HashMap::new();
        for c in vocab.all_concepts() {
            let b = base_phrase(&c);
            if base.insert(b.clone(), c.clone()).is_some() {
                return Err(PredictError::PhraseCollision(b));
            }
            let g = gerund_phrase(&c);
            if gerund.insert(g.clone(), c).is_some() {
                return Err(PredictError::PhraseCollision(g));
            }
        }
        Ok(QuestionGrammar { base, gerund })
    }

    fn exact(&self, question: &str) -> Option<Program> {
        for qtype in QuestionType::ALL {
            for prefix in prefixes(qtype) {
                let Some(rest) = question.strip_prefix(prefix).and_then(|r| r.strip_prefix(' ')) else {
                    continue;
                };
                let Some(rest) = rest.strip_suffix('?') else { continue };
                if let Some(pair) = rest.strip_prefix("between ") {
                    for (i, _) in pair.match_indices(" and ") {
                        let (a, b) = (&pair[..i], &pair[i + 5..]);
                        if let (Some(a), Some(b)) = (self.gerund.get(a), self.gerund.get(b)) {
                            return Some(template_program(qtype, Some(Relation::Between), &[a.clone(), b.clone()]));
                        }
                    }
                    continue;
                }
                for (word, relation) in [("before", Some(Relation::Before)), ("after", Some(Relation::After)), ("while", None)] {
                    if let Some(anchor) = rest.strip_prefix(word).and_then(|r| r.strip_prefix(" they ")) {
                        if let Some(c) = self.base.get(anchor) {
                            return Some(template_program(qtype, relation, &[c.clone()]));
                        }
                    }
                }
            }
        }
        None
    }

    fn nearest(&self, question: &str) -> Option<Program> {
        let lower = question.to_lowercase();
        let words: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect();
        let overlap = |prefix: &str| {
            prefix.to_lowercase().split(' ').filter(|w| words.contains(w)).count()
        };
        let qtype = QuestionType::ALL
            .into_iter()
            .max_by_key(|q| prefixes(*q).iter().map(|p| overlap(p)).max().unwrap_or(0))?;
        let relation = if words.contains(&"between") {
            Some(Relation::Between)
        } else if words.contains(&"before") {
            Some(Relation::Before)
        } else if words.contains(&"after") {
            Some(Relation::After)
        } else {
            None
        };
        let mut found: Vec<(usize, usize, &Concept)> = Vec::new();
        for table in [&self.base, &self.gerund] {
            for (phrase, c) in table.iter() {
                if let Some(pos) = lower.find(phrase.as_str()) {
                    found.push((pos, phrase.len(), c));
                }
            }
        }
        // longest phrase wins at a position, then order of appearance
        found.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        let mut anchors: Vec<Concept> = Vec::new();
        let mut covered = 0;
        for (pos, len, c) in found {
            if pos >= covered && !anchors.contains(c) {
                anchors.push(c.clone());
                covered = pos + len;
            }
        }
        let need = relation.map_or(1, |r| r.arity());
        (anchors.len() >= need).then(|| template_program(qtype, relation, &anchors[..need]))
    }

    /// Recovers the generating program of a templated question.
    pub fn predict_program(&self, question: &str) -> Result<Program, PredictError> {
        self.exact(question.trim()).ok_or_else(|| PredictError::UnparsableQuestion { nearest: self.nearest(question) })
    }
}
