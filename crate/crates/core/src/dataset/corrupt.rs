//! Controlled program noise standing in for a learned program predictor.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsl::{FuncKind, Program, ProgramNode, Relation, StepEdit};
use crate::vocab::ConceptVocabulary;

/// Which steps were eligible for perturbation and which were perturbed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corruption {
    pub eligible: usize,
    pub perturbed: Vec<usize>,
}

fn flipped(relation: Relation) -> Relation {
    match relation {
        Relation::Before => Relation::After,
        Relation::After => Relation::Before,
        Relation::Between => Relation::Between,
    }
}

/// Perturbs each filter or relate step independently with probability
/// `rate`. Filters get a different concept of the same kind; before/after
/// swap; `between` swaps its two operands. Query steps are never touched.
pub fn corrupt_program_traced(
    program: &Program,
    rate: f64,
    seed: u64,
    vocab: &ConceptVocabulary,
) -> (Program, Corruption) {
    let rate = rate.clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = program.clone();
    let mut report = Corruption::default();
    for step in program.steps() {
        let eligible = !matches!(step.func, FuncKind::QueryAction | FuncKind::QueryDirection | FuncKind::QueryBodyPart);
        // one draw per step regardless of eligibility keeps streams aligned
        let draw: f64 = rng.gen();
        if !eligible {
            continue;
        }
        report.eligible += 1;
        if draw >= rate {
            continue;
        }
        let edited = match (&step.concept, step.func) {
            (Some(c), _) => {
                let others: Vec<&String> = vocab.labels(c.kind).iter().filter(|l| **l != c.label).collect();
                match others.choose(&mut rng) {
                    Some(label) => out.with_step_replaced(step.index, StepEdit::Concept(vocab.concept(c.kind, label).expect("from vocab"))),
                    None => continue,
                }
            }
            (None, FuncKind::RelateBetween) => swap_between_operands(&out, step.index),
            (None, func) => {
                let relation = if func == FuncKind::RelateBefore { Relation::Before } else { Relation::After };
                out.with_step_replaced(step.index, StepEdit::Relation(flipped(relation)))
            }
        };
        out = edited.expect("edits preserve program validity");
        report.perturbed.push(step.index);
    }
    (out, report)
}

pub fn corrupt_program(program: &Program, rate: f64, seed: u64, vocab: &ConceptVocabulary) -> Program {
    corrupt_program_traced(program, rate, seed, vocab).0
}

fn swap_between_operands(program: &Program, index: usize) -> Result<Program, crate::dsl::DslError> {
    fn visit(node: &ProgramNode, counter: &mut usize, target: usize) -> ProgramNode {
        let rebuilt = match node {
            ProgramNode::Relate(r, args) => {
                let mut args: Vec<ProgramNode> = args.iter().map(|a| visit(a, counter, target)).collect();
                if *counter == target && args.len() == 2 {
                    args.swap(0, 1);
                }
                ProgramNode::Relate(*r, args)
            }
            ProgramNode::QueryAction(c) => ProgramNode::QueryAction(Box::new(visit(c, counter, target))),
            ProgramNode::QueryDirection(c) => ProgramNode::QueryDirection(Box::new(visit(c, counter, target))),
            ProgramNode::QueryBodyPart(c) => ProgramNode::QueryBodyPart(Box::new(visit(c, counter, target))),
            leaf => leaf.clone(),
        };
        *counter += 1;
        rebuilt
    }
    let mut counter = 0;
    Program::new(visit(program.root(), &mut counter, index))
}
