//! Concept vocabularies shared by the DSL, the motion generator and the model.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptKind {
    Action,
    Direction,
    BodyPart,
}

impl ConceptKind {
    pub const ALL: [ConceptKind; 3] = [ConceptKind::Action, ConceptKind::Direction, ConceptKind::BodyPart];

    pub fn name(self) -> &'static str {
        match self {
            ConceptKind::Action => "action",
            ConceptKind::Direction => "direction",
            ConceptKind::BodyPart => "body_part",
        }
    }
}

impl fmt::Display for ConceptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A vocabulary member tagged with its kind.
///
/// Construct through [`ConceptVocabulary::concept`] to get the membership
/// check; the fields are public so deserialized data can be re-validated.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Concept {
    pub kind: ConceptKind,
    pub label: String,
}

impl Concept {
    pub fn new(kind: ConceptKind, label: impl Into<String>) -> Self {
        Concept { kind, label: label.into() }
    }
}

impl fmt::Display for Concept {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptVocabulary {
    pub actions: Vec<String>,
    pub directions: Vec<String>,
    pub body_parts: Vec<String>,
}

pub const DEFAULT_DIRECTIONS: [&str; 6] = ["left", "right", "forward", "backward", "up", "down"];

pub const DEFAULT_BODY_PARTS: [&str; 10] = [
    "left_arm",
    "right_arm",
    "left_hand",
    "right_hand",
    "left_leg",
    "right_leg",
    "left_foot",
    "right_foot",
    "torso",
    "head",
];

/// The eight actions of the compact library; together they cover every
/// direction and every body part as a primary part.
pub const COMPACT_ACTIONS: [&str; 8] = ["walk", "step", "raise_arm", "wave", "kick", "squat", "nod", "jump"];

pub const FULL_ACTIONS: [&str; 13] = [
    "walk", "step", "raise_arm", "wave", "kick", "squat", "nod", "jump", "pick_up", "sit", "stand", "crawl", "turn",
];

impl Default for ConceptVocabulary {
    fn default() -> Self {
        ConceptVocabulary::full()
    }
}

impl ConceptVocabulary {
    pub fn new(actions: Vec<String>, directions: Vec<String>, body_parts: Vec<String>) -> Self {
        ConceptVocabulary { actions, directions, body_parts }
    }

    pub fn full() -> Self {
        Self::with_actions(&FULL_ACTIONS)
    }

    pub fn compact() -> Self {
        Self::with_actions(&COMPACT_ACTIONS)
    }

    fn with_actions(actions: &[&str]) -> Self {
        ConceptVocabulary {
            actions: actions.iter().map(|s| s.to_string()).collect(),
            directions: DEFAULT_DIRECTIONS.iter().map(|s| s.to_string()).collect(),
            body_parts: DEFAULT_BODY_PARTS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn labels(&self, kind: ConceptKind) -> &[String] {
        match kind {
            ConceptKind::Action => &self.actions,
            ConceptKind::Direction => &self.directions,
            ConceptKind::BodyPart => &self.body_parts,
        }
    }

    pub fn contains(&self, kind: ConceptKind, label: &str) -> bool {
        self.labels(kind).iter().any(|l| l == label)
    }

    /// Returns the concept if `label` is registered for `kind`.
    pub fn concept(&self, kind: ConceptKind, label: &str) -> Option<Concept> {
        self.contains(kind, label).then(|| Concept::new(kind, label))
    }

    /// All kinds whose vocabulary contains `label`.
    pub fn kinds_of(&self, label: &str) -> Vec<ConceptKind> {
        ConceptKind::ALL.into_iter().filter(|k| self.contains(*k, label)).collect()
    }

    pub fn concepts(&self, kind: ConceptKind) -> impl Iterator<Item = Concept> + '_ {
        self.labels(kind).iter().map(move |l| Concept::new(kind, l.clone()))
    }

    pub fn all_concepts(&self) -> Vec<Concept> {
        ConceptKind::ALL.into_iter().flat_map(|k| self.concepts(k)).collect()
    }

    pub fn is_empty(&self, kind: ConceptKind) -> bool {
        self.labels(kind).is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compact_vocabulary_sizes() {
        let v = ConceptVocabulary::compact();
        assert_eq!(v.actions.len(), 8);
        assert_eq!(v.directions.len(), 6);
        assert_eq!(v.body_parts.len(), 10);
    }

    #[test]
    fn membership() {
        let v = ConceptVocabulary::full();
        assert!(v.concept(ConceptKind::Direction, "left").is_some());
        assert!(v.concept(ConceptKind::Action, "left").is_none());
        assert_eq!(v.kinds_of("left"), vec![ConceptKind::Direction]);
        assert!(v.kinds_of("nosuch").is_empty());
    }
}
