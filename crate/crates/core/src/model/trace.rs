use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::diff::{Graph, Scalar};
use crate::dsl::Program;

use super::{Forward, LevelId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub func: String,
    pub concept: Option<String>,
    /// Weight on each memory `S_0..S_step`; zero outside the attended set.
    pub dep_weights: Vec<f64>,
    /// Read weights per pool level, one entry per position.
    pub position_weights: Vec<Vec<f64>>,
    /// Read mass per pool level; sums to 1.
    pub level_weights: Vec<f64>,
}

/// Memory states and attention weights of one forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryTrace {
    pub levels: Vec<LevelId>,
    pub positions: usize,
    pub s0: Vec<f64>,
    pub refined: Vec<Vec<f64>>,
    pub memories: Vec<Vec<f64>>,
    pub steps: Vec<StepTrace>,
}

fn row<T: Scalar>(g: &Graph<T>, v: crate::diff::Var) -> Vec<f64> {
    g.value(v).data().iter().map(|x| x.to_f64c()).collect()
}

impl Forward {
    /// Reads the recorded values back out of the graph. Step labels come
    /// from `program` (MacControl traces use generic labels).
    pub fn trace<T: Scalar>(&self, g: &Graph<T>, program: &Program) -> MemoryTrace {
        let prog_steps = program.steps();
        let mut steps = Vec::with_capacity(self.steps.len());
        for (k, s) in self.steps.iter().enumerate() {
            let mut dep = vec![0.0; k + 1];
            for (w, &i) in row(g, s.dep_weights).into_iter().zip(&s.memory_ids) {
                dep[i] += w;
            }
            let read = row(g, s.read_weights);
            let position_weights: Vec<Vec<f64>> = read.chunks(self.positions).map(|c| c.to_vec()).collect();
            let level_weights = position_weights.iter().map(|l| l.iter().sum()).collect();
            let (func, concept) = match prog_steps.get(k) {
                Some(ps) if prog_steps.len() == self.steps.len() => {
                    (ps.func.name().to_string(), ps.concept.as_ref().map(|c| c.label.clone()))
                }
                _ => (format!("control_{k}"), None),
            };
            steps.push(StepTrace { step: k, func, concept, dep_weights: dep, position_weights, level_weights });
        }
        MemoryTrace {
            levels: self.pool_levels.clone(),
            positions: self.positions,
            s0: row(g, self.memories[0]),
            refined: self.refined.iter().map(|&v| row(g, v)).collect(),
            memories: self.memories[1..].iter().map(|&v| row(g, v)).collect(),
            steps,
        }
    }
}

impl MemoryTrace {
    /// Plain-text rendering: per step, level mass, dependency weights and the
    /// position weights of each level.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let levels: Vec<String> = self.levels.iter().map(|l| l.to_string()).collect();
        writeln!(out, "levels: {}", levels.join(" ")).ok();
        writeln!(out, "positions per level: {}", self.positions).ok();
        for s in &self.steps {
            let label = match &s.concept {
                Some(c) => format!("{}({c})", s.func),
                None => s.func.clone(),
            };
            writeln!(out, "step {} {label}", s.step).ok();
            let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
            writeln!(out, "  level: {}", fmt(&s.level_weights)).ok();
            writeln!(out, "  deps:  {}", fmt(&s.dep_weights)).ok();
            for (l, w) in self.levels.iter().zip(&s.position_weights) {
                writeln!(out, "  pos[{l}]: {}", fmt(w)).ok();
            }
        }
        out
    }
}
