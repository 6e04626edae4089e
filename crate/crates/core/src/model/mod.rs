//! The reasoning network: motion and text encoders, question-aware fusion,
//! program-step embeddings, iterative multi-level reading and per-type
//! answer heads.

mod forward;
mod infer;
mod text;
mod trace;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::diff::{
    encode_checkpoint, grad_check, load_checkpoint, read_checkpoint, save_checkpoint, DiffError, GradCheckConfig,
    GradCheckReport, Init, ParamId, ParamRegistry, Scalar,
};
use crate::dsl::{FuncKind, QuestionType};
use crate::motion::skeleton::{NUM_JOINTS, PATCH_GROUPS};
use crate::vocab::{Concept, ConceptVocabulary};

pub use forward::{EncodedMotion, Forward, FusionTrace, MotionWindow, StepOutput, StepVars};
pub use infer::{mode_ii_starts, window_starts, ModeIIOutput, RunScore};
pub use text::{qtype_phrase, tokenize, TextVocab, UNK};
pub use trace::{MemoryTrace, StepTrace};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("config error: {0}")]
    Config(String),
    #[error("no answer labels for {0}")]
    EmptyBranch(QuestionType),
    #[error("concept `{0}` is not in the model vocabulary")]
    UnknownConcept(String),
    #[error("checkpoint metadata: {0}")]
    Meta(String),
}

/// A pool level: the token features after `Block(i)` encoder blocks
/// (`Block(0)` is the patch embedding), or the final normalized output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LevelId {
    Block(usize),
    Final,
}

impl fmt::Display for LevelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LevelId::Block(i) => write!(f, "{i}"),
            LevelId::Final => f.write_str("final"),
        }
    }
}

impl Serialize for LevelId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            LevelId::Block(i) => s.serialize_u64(*i as u64),
            LevelId::Final => s.serialize_str("final"),
        }
    }
}

impl<'de> Deserialize<'de> for LevelId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(usize),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(i) => Ok(LevelId::Block(i)),
            Raw::S(s) if s == "final" => Ok(LevelId::Final),
            Raw::S(s) => s.parse().map(LevelId::Block).map_err(|_| serde::de::Error::custom(format!("bad level `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextEncoderKind {
    MeanPool,
    Block,
}

/// Which memories a step's dependency attention may see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepMask {
    /// Only the memories of the step's program dependencies (`S_0` for leaves).
    Dependencies,
    /// `S_0` and every earlier memory.
    AllPrior,
}

/// Architecture switch used by the ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Program-guided reading over all configured levels.
    Full,
    /// Pool collapsed to the final level.
    NoFeatureSelection,
    /// Step embeddings replaced by soft attention over question words.
    MacControl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Window length W in frames.
    pub window: usize,
    /// Frames per temporal patch.
    pub patch: usize,
    pub d: usize,
    pub blocks: usize,
    pub heads: usize,
    /// Heads of the pool-reading attention; traces average over heads.
    pub read_heads: usize,
    /// Hidden width of encoder MLPs as a multiple of d.
    pub mlp_ratio: usize,
    pub levels: Vec<LevelId>,
    pub text_encoder: TextEncoderKind,
    pub dropout: f64,
    pub dep_mask: DepMask,
    pub variant: Variant,
    /// Reasoning steps of the MacControl variant.
    pub mac_steps: usize,
    /// Scale applied to joint coordinates before patch embedding.
    pub input_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            window: 64,
            patch: 8,
            d: 64,
            blocks: 4,
            heads: 1,
            read_heads: 1,
            mlp_ratio: 2,
            levels: vec![LevelId::Block(0), LevelId::Block(1), LevelId::Block(2), LevelId::Block(3), LevelId::Final],
            text_encoder: TextEncoderKind::Block,
            dropout: 0.1,
            dep_mask: DepMask::Dependencies,
            variant: Variant::Full,
            mac_steps: 4,
            input_scale: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.window == 0 || self.patch == 0 || self.window % self.patch != 0 {
            return err(format!("window {} must be a positive multiple of patch {}", self.window, self.patch));
        }
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return err(format!("d {} must be a positive multiple of heads {}", self.d, self.heads));
        }
        if self.read_heads == 0 || self.d % self.read_heads != 0 {
            return err(format!("d {} must be a positive multiple of read_heads {}", self.d, self.read_heads));
        }
        if self.levels.is_empty() {
            return err("at least one pool level is required".into());
        }
        if !self.levels.contains(&LevelId::Final) {
            return err("levels must include `final` (the fused level)".into());
        }
        let mut sorted = self.levels.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.levels.len() {
            return err("duplicate pool levels".into());
        }
        if let Some(LevelId::Block(i)) = self.levels.iter().find(|l| matches!(l, LevelId::Block(i) if *i > self.blocks)) {
            return err(format!("level {i} exceeds {} blocks", self.blocks));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.variant == Variant::MacControl && self.mac_steps == 0 {
            return err("mac_steps must be positive".into());
        }
        Ok(())
    }

    /// Levels actually read by the reasoner.
    pub fn pool_levels(&self) -> Vec<LevelId> {
        match self.variant {
            Variant::NoFeatureSelection => vec![LevelId::Final],
            _ => self.levels.clone(),
        }
    }

    pub fn patches_per_window(&self) -> usize {
        self.window / self.patch
    }

    /// Tokens per encoded window.
    pub fn tokens_per_window(&self) -> usize {
        PATCH_GROUPS.len() * self.patches_per_window()
    }
}

/// Answer labels per branch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSpace {
    pub labels: BTreeMap<QuestionType, Vec<String>>,
}

impl AnswerSpace {
    pub fn labels(&self, q: QuestionType) -> &[String] {
        self.labels.get(&q).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn index(&self, q: QuestionType, label: &str) -> Option<usize> {
        self.labels(q).iter().position(|l| l == label)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LnIds {
    pub g: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockIds {
    pub ln1: LnIds,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ln2: LnIds,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct AttnIds {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub ln: LnIds,
}

#[derive(Debug, Clone)]
pub(crate) struct HeadIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct ParamIds {
    pub patch: Vec<(ParamId, ParamId)>,
    pub group_emb: ParamId,
    pub blocks: Vec<BlockIds>,
    pub final_ln: LnIds,
    pub level_proj: Vec<(ParamId, ParamId)>,
    pub level_tag: Option<ParamId>,
    pub tok_emb: ParamId,
    pub text_block: Option<BlockIds>,
    pub text_ln: LnIds,
    pub fuse_text: AttnIds,
    pub fuse_qtype: AttnIds,
    pub func_emb: ParamId,
    pub concept_emb: ParamId,
    pub concept_proj: ParamId,
    pub prog_ln: LnIds,
    pub mac: Option<(ParamId, AttnIds)>,
    pub s0: ParamId,
    pub dep: AttnIds,
    pub read: AttnIds,
    pub heads: BTreeMap<QuestionType, HeadIds>,
}

struct Builder<'a, T> {
    reg: &'a mut ParamRegistry<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Builder<'_, T> {
    fn weight(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId, DiffError> {
        self.reg.add(name, rows, cols, Init::Xavier, true, &mut self.rng)
    }

    fn bias(&mut self, name: &str, cols: usize) -> Result<ParamId, DiffError> {
        self.reg.add(name, 1, cols, Init::Zeros, false, &mut self.rng)
    }

    fn embedding(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId, DiffError> {
        self.reg.add(name, rows, cols, Init::Normal { std: 0.5 }, true, &mut self.rng)
    }

    fn ln(&mut self, name: &str, d: usize) -> Result<LnIds, DiffError> {
        Ok(LnIds {
            g: self.reg.add(&format!("{name}.gain"), 1, d, Init::Ones, false, &mut self.rng)?,
            b: self.reg.add(&format!("{name}.bias"), 1, d, Init::Zeros, false, &mut self.rng)?,
        })
    }

    fn block(&mut self, name: &str, d: usize, hidden: usize) -> Result<BlockIds, DiffError> {
        Ok(BlockIds {
            ln1: self.ln(&format!("{name}.ln1"), d)?,
            wq: self.weight(&format!("{name}.attn.wq"), d, d)?,
            wk: self.weight(&format!("{name}.attn.wk"), d, d)?,
            wv: self.weight(&format!("{name}.attn.wv"), d, d)?,
            wo: self.weight(&format!("{name}.attn.wo"), d, d)?,
            ln2: self.ln(&format!("{name}.ln2"), d)?,
            w1: self.weight(&format!("{name}.mlp.w1"), d, hidden)?,
            b1: self.bias(&format!("{name}.mlp.b1"), hidden)?,
            w2: self.weight(&format!("{name}.mlp.w2"), hidden, d)?,
            b2: self.bias(&format!("{name}.mlp.b2"), d)?,
        })
    }

    fn attn(&mut self, name: &str, d: usize) -> Result<AttnIds, DiffError> {
        Ok(AttnIds {
            wq: self.weight(&format!("{name}.wq"), d, d)?,
            wk: self.weight(&format!("{name}.wk"), d, d)?,
            wv: self.weight(&format!("{name}.wv"), d, d)?,
            ln: self.ln(&format!("{name}.ln"), d)?,
        })
    }
}

/// Serialized alongside the weights so a checkpoint is self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config: ModelConfig,
    pub vocab: ConceptVocabulary,
    pub text_vocab: TextVocab,
    pub answers: AnswerSpace,
    pub seed: u64,
    /// Free-form provenance (training config, dataset hash).
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct ImoreModel<T> {
    pub config: ModelConfig,
    pub params: ParamRegistry<T>,
    pub vocab: ConceptVocabulary,
    pub text_vocab: TextVocab,
    pub answers: AnswerSpace,
    pub seed: u64,
    concepts: Vec<Concept>,
    pub(crate) ids: ParamIds,
}

impl<T: Scalar> ImoreModel<T> {
    pub fn new(
        config: ModelConfig,
        vocab: ConceptVocabulary,
        text_vocab: TextVocab,
        answers: AnswerSpace,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.d;
        let mut reg = ParamRegistry::new();
        let concepts = vocab.all_concepts();
        let mut b = Builder { reg: &mut reg, rng: ChaCha8Rng::seed_from_u64(seed) };
        let mut patch = Vec::new();
        for (g, joints) in PATCH_GROUPS.iter().enumerate() {
            let fan_in = config.patch * joints.len() * 3;
            patch.push((b.weight(&format!("enc.patch{g}.w"), fan_in, d)?, b.bias(&format!("enc.patch{g}.b"), d)?));
        }
        let group_emb = b.embedding("enc.group_emb", PATCH_GROUPS.len(), d)?;
        let blocks = (0..config.blocks)
            .map(|i| b.block(&format!("enc.block{i}"), d, d * config.mlp_ratio))
            .collect::<Result<Vec<_>, _>>()?;
        let final_ln = b.ln("enc.final_ln", d)?;
        let pool_levels = config.pool_levels();
        let mut level_proj = Vec::new();
        for l in &pool_levels {
            level_proj.push((b.weight(&format!("pool.proj_{l}.w"), d, d)?, b.bias(&format!("pool.proj_{l}.b"), d)?));
        }
        let level_tag = if pool_levels.len() > 1 { Some(b.embedding("pool.level_tag", pool_levels.len(), d)?) } else { None };
        let tok_emb = b.embedding("text.tok_emb", text_vocab.len(), d)?;
        let text_block = match config.text_encoder {
            TextEncoderKind::Block => Some(b.block("text.block", d, d * config.mlp_ratio)?),
            TextEncoderKind::MeanPool => None,
        };
        let text_ln = b.ln("text.ln", d)?;
        let fuse_text = b.attn("fuse.text", d)?;
        let fuse_qtype = b.attn("fuse.qtype", d)?;
        let func_emb = b.embedding("prog.func_emb", FuncKind::ALL.len(), d)?;
        let concept_emb = b.embedding("prog.concept_emb", concepts.len() + 1, d)?;
        let concept_proj = b.weight("prog.concept_proj", d, d)?;
        let prog_ln = b.ln("prog.ln", d)?;
        let mac = match config.variant {
            Variant::MacControl => Some((b.embedding("mac.step_query", config.mac_steps, d)?, b.attn("mac.control", d)?)),
            _ => None,
        };
        let s0 = b.embedding("reason.s0", 1, d)?;
        let dep = b.attn("reason.dep", d)?;
        let read = b.attn("reason.read", d)?;
        let mut heads = BTreeMap::new();
        for q in QuestionType::ALL {
            let a = answers.labels(q).len();
            if a == 0 {
                continue;
            }
            let n = q.name();
            heads.insert(
                q,
                HeadIds {
                    w1: b.weight(&format!("head.{n}.w1"), d, d)?,
                    b1: b.bias(&format!("head.{n}.b1"), d)?,
                    w2: b.weight(&format!("head.{n}.w2"), d, a)?,
                    b2: b.bias(&format!("head.{n}.b2"), a)?,
                },
            );
        }
        let ids = ParamIds {
            patch,
            group_emb,
            blocks,
            final_ln,
            level_proj,
            level_tag,
            tok_emb,
            text_block,
            text_ln,
            fuse_text,
            fuse_qtype,
            func_emb,
            concept_emb,
            concept_proj,
            prog_ln,
            mac,
            s0,
            dep,
            read,
            heads,
        };
        Ok(ImoreModel { config, params: reg, vocab, text_vocab, answers, seed, concepts, ids })
    }

    /// Row of a concept in the concept embedding table; 0 means "none".
    pub fn concept_index(&self, concept: Option<&Concept>) -> Result<usize, ModelError> {
        match concept {
            None => Ok(0),
            Some(c) => self
                .concepts
                .iter()
                .position(|x| x == c)
                .map(|i| i + 1)
                .ok_or_else(|| ModelError::UnknownConcept(c.label.clone())),
        }
    }

    /// Names of the parameters belonging to a branch head.
    pub fn head_params(&self, q: QuestionType) -> Vec<ParamId> {
        self.ids.heads.get(&q).map(|h| vec![h.w1, h.b1, h.w2, h.b2]).unwrap_or_default()
    }

    pub fn joints(&self) -> usize {
        NUM_JOINTS
    }

    pub fn meta(&self, extra: serde_json::Value) -> ModelMeta {
        ModelMeta {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            text_vocab: self.text_vocab.clone(),
            answers: self.answers.clone(),
            seed: self.seed,
            extra,
        }
    }

    pub fn to_bytes(&self, extra: serde_json::Value) -> Vec<u8> {
        let meta = serde_json::to_string(&self.meta(extra)).expect("meta serializes");
        encode_checkpoint(&self.params, &meta)
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<(), ModelError> {
        let meta = serde_json::to_string(&self.meta(extra)).expect("meta serializes");
        Ok(save_checkpoint(path, &self.params, &meta)?)
    }

    /// Finite-difference check of the answer loss against every parameter.
    pub fn grad_check(
        &self,
        windows: &[MotionWindow],
        question: &str,
        program: &crate::dsl::Program,
        answer: &str,
        cfg: GradCheckConfig,
    ) -> Result<GradCheckReport, ModelError> {
        let mut scratch = self.clone();
        grad_check(
            &self.params,
            |g, reg| {
                scratch.params.clone_from(reg);
                let fwd = scratch.forward(g, windows, question, program)?;
                scratch.loss(g, &fwd, answer)
            },
            cfg,
        )
    }

    /// Rebuilds the model described by a checkpoint and loads its weights.
    pub fn load(path: &Path) -> Result<(Self, ModelMeta), ModelError> {
        let (meta_text, _) = read_checkpoint::<T>(path)?;
        let meta: ModelMeta = serde_json::from_str(&meta_text).map_err(|e| ModelError::Meta(e.to_string()))?;
        let mut model = ImoreModel::new(
            meta.config.clone(),
            meta.vocab.clone(),
            meta.text_vocab.clone(),
            meta.answers.clone(),
            meta.seed,
        )?;
        load_checkpoint(path, &mut model.params)?;
        Ok((model, meta))
    }
}
