use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DslError, Program, ProgramNode, QuestionType, Relation};
use crate::vocab::{ConceptKind, ConceptVocabulary};

/// One (question type, relation) cell of the template grammar. `relation:
/// None` is a direct `query(filter(..))` program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TemplateCell {
    pub qtype: QuestionType,
    pub relation: Option<Relation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub cells: Vec<TemplateCell>,
    pub filter_kinds: Vec<ConceptKind>,
}

impl Default for TemplateSet {
    /// Every question type crossed with every relation, filtering on any kind.
    fn default() -> Self {
        let cells = QuestionType::ALL
            .into_iter()
            .flat_map(|qtype| Relation::ALL.into_iter().map(move |r| TemplateCell { qtype, relation: Some(r) }))
            .collect();
        TemplateSet { cells, filter_kinds: ConceptKind::ALL.to_vec() }
    }
}

impl TemplateSet {
    pub fn only(qtype: QuestionType, relation: Option<Relation>) -> Self {
        TemplateSet { cells: vec![TemplateCell { qtype, relation }], ..Default::default() }
    }
}

/// Draws a program from the template grammar. Deterministic in `seed`.
pub fn random_program(seed: u64, vocab: &ConceptVocabulary, templates: &TemplateSet) -> Result<Program, DslError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_program_with(&mut rng, vocab, templates)
}

pub(crate) fn random_program_with<R: Rng>(
    rng: &mut R,
    vocab: &ConceptVocabulary,
    templates: &TemplateSet,
) -> Result<Program, DslError> {
    let kinds: Vec<ConceptKind> = templates.filter_kinds.iter().copied().filter(|k| !vocab.is_empty(*k)).collect();
    if kinds.is_empty() {
        let kind = templates.filter_kinds.first().copied().unwrap_or(ConceptKind::Action);
        return Err(DslError::EmptyVocabulary(kind));
    }
    let cell = templates
        .cells
        .choose(rng)
        .ok_or_else(|| DslError::Invalid("template set has no cells".into()))?;
    let mut filter = || {
        let kind = *kinds.choose(rng).expect("non-empty");
        let label = vocab.labels(kind).choose(rng).expect("non-empty").clone();
        ProgramNode::filter(vocab.concept(kind, &label).expect("drawn from vocabulary"))
    };
    let body = match cell.relation {
        None => filter(),
        Some(r) => ProgramNode::Relate(r, (0..r.arity()).map(|_| filter()).collect()),
    };
    Program::new(ProgramNode::query(cell.qtype, body))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_program, FuncKind};
    use proptest::prelude::*;

    #[test]
    fn same_seed_same_program() {
        let v = ConceptVocabulary::full();
        let t = TemplateSet::default();
        assert_eq!(random_program(0, &v, &t).unwrap(), random_program(0, &v, &t).unwrap());
    }

    #[test]
    fn restricted_template_set() {
        let v = ConceptVocabulary::full();
        let t = TemplateSet::only(QuestionType::QueryAction, Some(Relation::Before));
        for seed in 0..200 {
            let p = random_program(seed, &v, &t).unwrap();
            assert_eq!(p.question_type(), QuestionType::QueryAction);
            assert!(matches!(p.root(), ProgramNode::QueryAction(c) if matches!(**c, ProgramNode::Relate(Relation::Before, _))));
        }
    }

    #[test]
    fn empty_vocabulary() {
        let v = ConceptVocabulary::new(vec![], vec![], vec![]);
        assert!(matches!(random_program(1, &v, &TemplateSet::default()), Err(DslError::EmptyVocabulary(_))));
    }

    #[test]
    fn thousand_draws_satisfy_invariants() {
        let v = ConceptVocabulary::full();
        let t = TemplateSet::default();
        for seed in 0..1000 {
            let p = random_program(seed, &v, &t).unwrap();
            assert_eq!(p.len(), p.root().node_count());
            assert_eq!(Some(p.question_type()), p.root().question_type());
            let mut has_parent = vec![false; p.len()];
            for s in p.steps() {
                for &d in &s.deps {
                    assert!(d < s.index);
                    assert!(!has_parent[d], "each step feeds exactly one consumer");
                    has_parent[d] = true;
                }
            }
            assert_eq!(has_parent.iter().filter(|h| !**h).count(), 1);
            assert_eq!(p.steps().last().unwrap().func, FuncKind::query(p.question_type()));
        }
    }

    proptest! {
        #[test]
        fn text_round_trip(seed in any::<u64>()) {
            let v = ConceptVocabulary::full();
            let mut t = TemplateSet::default();
            t.cells.extend(QuestionType::ALL.map(|qtype| TemplateCell { qtype, relation: None }));
            let p = random_program(seed, &v, &t).unwrap();
            let back = parse_program(&p.to_text(), &v).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
