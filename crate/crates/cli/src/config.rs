//! Run configuration file: one TOML document with optional sections for
//! synthesis, question generation, training and evaluation.

use std::path::Path;

use anyhow::Context;
use imore::dataset::{GenConfig, Split};
use imore::model::RunScore;
use imore::motion::SynthConfig;
use imore::train::{EvalOptions, InferenceMode, ProgramSource, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::{Coded, EXIT_CONFIG};

pub const SEED_ENV: &str = "IMORE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Base training preset (`desk` or `reference`); `[train]` keys override it.
    pub preset: String,
    pub seed: Option<u64>,
    /// Number of motion sequences to synthesize.
    pub motions: usize,
    pub synth: SynthConfig,
    pub dataset: GenConfig,
    pub train: toml::Table,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: "desk".into(),
            seed: None,
            motions: 200,
            synth: SynthConfig::default(),
            dataset: GenConfig::default(),
            train: toml::Table::new(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub split: Split,
    pub mode: InferenceMode,
    pub runs: usize,
    pub run_score: RunScore,
    pub programs: ProgramSource,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = EvalOptions::default();
        EvalSection { split: d.split, mode: d.mode, runs: d.runs, run_score: d.run_score, programs: d.programs }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> anyhow::Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Coded::new(EXIT_CONFIG, format!("invalid config: {e}")))?;
        cfg.train_config()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> anyhow::Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                RunConfig::parse(&text).with_context(|| format!("in {}", p.display()))
            }
        }
    }

    /// The preset with the `[train]` table laid over it.
    pub fn train_config(&self) -> anyhow::Result<TrainConfig> {
        let base = TrainConfig::preset(&self.preset)
            .ok_or_else(|| Coded::new(EXIT_CONFIG, format!("unknown preset `{}` (expected desk or reference)", self.preset)))?;
        let mut value = toml::Value::try_from(&base).context("serializing preset")?;
        merge(&mut value, toml::Value::Table(self.train.clone()));
        let cfg: TrainConfig =
            value.try_into().map_err(|e| Coded::new(EXIT_CONFIG, format!("invalid [train] section: {e}")))?;
        Ok(cfg)
    }

    /// Flag, then config file, then the environment, then 0.
    pub fn resolve_seed(&self, flag: Option<u64>) -> anyhow::Result<u64> {
        if let Some(s) = flag.or(self.seed) {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Coded::new(EXIT_CONFIG, format!("{SEED_ENV}=`{v}` is not an unsigned integer")).into()),
            Err(_) => Ok(0),
        }
    }
}

/// Recursively overlays `patch` onto `base`; tables merge, other values replace.
fn merge(base: &mut toml::Value, patch: toml::Value) {
    match (base, patch) {
        (toml::Value::Table(b), toml::Value::Table(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_section_overrides_preset() {
        let cfg = RunConfig::parse("preset = \"reference\"\n[train]\nepochs = 3\n[train.model]\nd = 16\n").unwrap();
        let t = cfg.train_config().unwrap();
        assert_eq!((t.lr, t.batch_size, t.epochs, t.model.d, t.model.dropout), (1e-6, 4, 3, 16, 0.1));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("motion = 3").is_err());
        assert!(RunConfig::parse("[train]\nlearning_rate = 0.1").is_err());
        assert!(RunConfig::parse("[train.model]\nwidth = 8").is_err());
        assert!(RunConfig::parse("[synth]\nframes = 8").is_err());
        assert!(RunConfig::parse("preset = \"huge\"").is_err());
    }

    #[test]
    fn seed_precedence() {
        let cfg = RunConfig::parse("seed = 5").unwrap();
        assert_eq!(cfg.resolve_seed(Some(9)).unwrap(), 9);
        assert_eq!(cfg.resolve_seed(None).unwrap(), 5);
    }
}
