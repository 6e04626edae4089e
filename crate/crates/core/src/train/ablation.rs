use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetManifest;
use crate::diff::Scalar;
use crate::motion::MotionSequence;

use super::{evaluate, explicit_baseline, train, AblationVariant, EvalOptions, EvalReport, TrainConfig, TrainError};

/// Reference overall accuracies of the full-scale benchmark, for context.
pub const REFERENCE_ACCURACY: [(AblationVariant, f64); 2] =
    [(AblationVariant::NoFeatureSelection, 0.607), (AblationVariant::Full, 0.640)];

/// Median; the mean of the two middle values for even lengths.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub accuracies: Vec<f64>,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: AblationVariant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let seeds: Vec<String> = self.seeds.iter().map(|s| format!("seed {s}")).collect();
        writeln!(out, "variant\t{}\tmedian\treference", seeds.join("\t")).ok();
        for r in &self.rows {
            let accs: Vec<String> = r.accuracies.iter().map(|a| format!("{a:.3}")).collect();
            let reference = REFERENCE_ACCURACY
                .iter()
                .find(|(v, _)| *v == r.variant)
                .map_or("-".to_string(), |(_, a)| format!("{a:.3}"));
            writeln!(out, "{}\t{}\t{:.3}\t{reference}", r.variant.name(), accs.join("\t"), r.median).ok();
        }
        out
    }
}

/// Trains every network variant once per seed and evaluates each on
/// `eval` (the explicit oracle is evaluated directly). `on_run` sees every
/// individual report.
pub fn run_ablation<T: Scalar>(
    manifest: &DatasetManifest,
    motions: &HashMap<String, MotionSequence>,
    base: &TrainConfig,
    seeds: &[u64],
    variants: &[AblationVariant],
    eval: &EvalOptions,
    mut on_run: impl FnMut(AblationVariant, u64, &EvalReport),
) -> Result<AblationTable, TrainError> {
    if seeds.len() < 3 {
        return Err(TrainError::Config(format!("ablations need at least 3 seeds, got {}", seeds.len())));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mut accuracies = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let report = match variant {
                AblationVariant::ExplicitOracle => explicit_baseline(manifest, motions, eval)?,
                _ => {
                    let cfg = TrainConfig { seed, variant, ..base.clone() };
                    let outcome = train::<T>(manifest, motions, &cfg)?;
                    evaluate(&outcome.model, manifest, motions, eval)?
                }
            };
            on_run(variant, seed, &report);
            accuracies.push(report.accuracy);
        }
        rows.push(AblationRow { variant, median: median(&accuracies), accuracies });
    }
    Ok(AblationTable { seeds: seeds.to_vec(), rows })
}
