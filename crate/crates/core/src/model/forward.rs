use crate::diff::{Graph, Scalar, Tensor, Var};
use crate::dsl::{Program, QuestionType};
use crate::motion::skeleton::{NEUTRAL_POSE, NUM_JOINTS, PATCH_GROUPS};

use super::{AttnIds, BlockIds, DepMask, ImoreModel, LevelId, LnIds, ModelError, Variant};

/// `W` consecutive frames (`W x J x 3`, row-major) starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionWindow {
    pub frames: Vec<f32>,
    pub start: usize,
}

/// Encoder output for all windows of one motion. Levels other than the
/// final one do not depend on the question, so their pool keys and values
/// are computed once and shared by every question on the motion.
#[derive(Debug, Clone)]
pub struct EncodedMotion {
    /// Final encoder output, windows stacked along positions.
    pub final_features: Var,
    /// Raw features of every configured level, in config order.
    pub levels: Vec<(LevelId, Var)>,
    /// Read-attention keys/values per pool level; `None` for the final level.
    shared: Vec<Option<(Var, Var)>>,
    pub positions: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    pub s_prime: Var,
    pub s: Var,
    pub dep_weights: Var,
    /// Dependency attention output before residual and norm.
    pub dep_pre: Var,
    pub read_weights: Var,
}

#[derive(Debug, Clone)]
pub struct StepVars {
    pub memory_ids: Vec<usize>,
    pub dep_weights: Var,
    pub dep_pre: Var,
    pub read_weights: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct FusionTrace {
    /// Question attention output before residual and norm.
    pub text_pre: Var,
    pub text_weights: Var,
    pub text_out: Var,
    pub qtype_weights: Var,
    pub h_m: Var,
}

/// Handles to everything a forward pass recorded.
#[derive(Debug, Clone)]
pub struct Forward {
    pub qtype: QuestionType,
    pub logits: Var,
    pub f_t: Var,
    pub h_m: Var,
    pub program_embedding: Var,
    pub memories: Vec<Var>,
    pub refined: Vec<Var>,
    pub steps: Vec<StepVars>,
    pub pool_levels: Vec<LevelId>,
    pub positions: usize,
}

/// Sinusoidal encoding of (possibly fractional) positions.
pub(crate) fn sinusoid<T: Scalar>(positions: &[f64], d: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(positions.len() * d);
    for &p in positions {
        for i in 0..d {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            data.push(T::of(if i % 2 == 0 { (p * rate).sin() } else { (p * rate).cos() }));
        }
    }
    Tensor::new(positions.len(), d, data).expect("sized above")
}

impl<T: Scalar> ImoreModel<T> {
    fn p(&self, g: &mut Graph<T>, id: crate::diff::ParamId) -> Var {
        g.param(&self.params, id)
    }

    fn ln(&self, g: &mut Graph<T>, x: Var, ids: &LnIds) -> Result<Var, ModelError> {
        let (gain, bias) = (self.p(g, ids.g), self.p(g, ids.b));
        Ok(g.layer_norm(x, gain, bias)?)
    }

    /// Pre-norm transformer block.
    fn block(&self, g: &mut Graph<T>, x: Var, ids: &BlockIds) -> Result<Var, ModelError> {
        let h = self.ln(g, x, &ids.ln1)?;
        let (wq, wk, wv, wo) = (self.p(g, ids.wq), self.p(g, ids.wk), self.p(g, ids.wv), self.p(g, ids.wo));
        let q = g.matmul(h, wq)?;
        let k = g.matmul(h, wk)?;
        let v = g.matmul(h, wv)?;
        let heads = self.config.heads;
        let dh = self.config.d / heads;
        let att = if heads == 1 {
            g.attention(q, k, v)?.0
        } else {
            let mut outs = Vec::with_capacity(heads);
            for i in 0..heads {
                let qi = g.slice_cols(q, i * dh, dh)?;
                let ki = g.slice_cols(k, i * dh, dh)?;
                let vi = g.slice_cols(v, i * dh, dh)?;
                outs.push(g.attention(qi, ki, vi)?.0);
            }
            g.concat_cols(&outs)?
        };
        let o = g.matmul(att, wo)?;
        let o = g.dropout(o, self.config.dropout);
        let x = g.add(x, o)?;
        let h = self.ln(g, x, &ids.ln2)?;
        let (w1, b1, w2, b2) = (self.p(g, ids.w1), self.p(g, ids.b1), self.p(g, ids.w2), self.p(g, ids.b2));
        let m = g.linear(h, w1, Some(b1))?;
        let m = g.gelu(m);
        let m = g.linear(m, w2, Some(b2))?;
        let m = g.dropout(m, self.config.dropout);
        Ok(g.add(x, m)?)
    }

    /// `LN(q_in + Attn(q_in Wq, kv Wk, kv Wv))`; also returns the weights.
    fn attend(&self, g: &mut Graph<T>, q_in: Var, kv: Var, ids: &AttnIds) -> Result<(Var, Var), ModelError> {
        let (out, w, _) = self.attend_traced(g, q_in, kv, ids)?;
        Ok((out, w))
    }

    /// Like `attend`, plus the attention output before the residual.
    fn attend_traced(&self, g: &mut Graph<T>, q_in: Var, kv: Var, ids: &AttnIds) -> Result<(Var, Var, Var), ModelError> {
        let (wq, wk, wv) = (self.p(g, ids.wq), self.p(g, ids.wk), self.p(g, ids.wv));
        let q = g.matmul(q_in, wq)?;
        let k = g.matmul(kv, wk)?;
        let v = g.matmul(kv, wv)?;
        let (a, w) = g.attention(q, k, v)?;
        let r = g.add(q_in, a)?;
        Ok((self.ln(g, r, &ids.ln)?, w, a))
    }

    /// Patch inputs of one window: per body-part group, one row per temporal
    /// patch holding the group's joints over the patch, relative to the root
    /// position at the patch's first frame, minus the neutral pose.
    pub fn window_features(&self, window: &MotionWindow) -> Result<Vec<Tensor<T>>, ModelError> {
        let (w, p) = (self.config.window, self.config.patch);
        if window.frames.len() != w * NUM_JOINTS * 3 {
            return Err(ModelError::Diff(crate::diff::DiffError::Shape(format!(
                "window holds {} values, expected {w} frames x {NUM_JOINTS} joints x 3",
                window.frames.len()
            ))));
        }
        let scale = self.config.input_scale;
        let at = |f: usize, j: usize, a: usize| window.frames[(f * NUM_JOINTS + j) * 3 + a] as f64;
        let np = w / p;
        let mut out = Vec::with_capacity(PATCH_GROUPS.len());
        for joints in PATCH_GROUPS {
            let width = p * joints.len() * 3;
            let mut data = Vec::with_capacity(np * width);
            for t in 0..np {
                let f0 = t * p;
                let root = [at(f0, 0, 0), at(f0, 0, 1), at(f0, 0, 2)];
                for f in f0..f0 + p {
                    for &j in joints {
                        for (a, r) in root.iter().enumerate() {
                            let rest = (NEUTRAL_POSE[j][a] - NEUTRAL_POSE[0][a]) as f64;
                            data.push(T::of((at(f, j, a) - r - rest) * scale));
                        }
                    }
                }
            }
            out.push(Tensor::new(np, width, data)?);
        }
        Ok(out)
    }

    /// Encodes one window; returns every configured level in config order.
    pub fn encode_motion(&self, g: &mut Graph<T>, window: &MotionWindow) -> Result<Vec<(LevelId, Var)>, ModelError> {
        let feats = self.window_features(window)?;
        let d = self.config.d;
        let np = self.config.patches_per_window();
        let mut rows = Vec::with_capacity(feats.len());
        for (f, &(w, b)) in feats.into_iter().zip(&self.ids.patch) {
            let x = g.input(f);
            let (w, b) = (self.p(g, w), self.p(g, b));
            rows.push(g.linear(x, w, Some(b))?);
        }
        let x = g.concat_rows(&rows)?;
        let offset = window.start as f64 / self.config.patch as f64;
        let positions: Vec<f64> =
            (0..PATCH_GROUPS.len()).flat_map(|_| (0..np).map(move |t| offset + t as f64)).collect();
        let pos = g.input(sinusoid(&positions, d));
        let x = g.add(x, pos)?;
        let groups: Vec<usize> = (0..PATCH_GROUPS.len()).flat_map(|gi| std::iter::repeat(gi).take(np)).collect();
        let table = self.p(g, self.ids.group_emb);
        let ge = g.gather(table, &groups)?;
        let mut x = g.add(x, ge)?;
        x = g.dropout(x, self.config.dropout);
        let mut by_depth = vec![x];
        for ids in &self.ids.blocks {
            x = self.block(g, x, ids)?;
            by_depth.push(x);
        }
        let fin = self.ln(g, x, &self.ids.final_ln)?;
        Ok(self
            .config
            .levels
            .iter()
            .map(|&l| match l {
                LevelId::Block(i) => (l, by_depth[i]),
                LevelId::Final => (l, fin),
            })
            .collect())
    }

    /// Encodes every window and stacks positions; precomputes the
    /// question-independent part of the pool.
    pub fn encode_windows(&self, g: &mut Graph<T>, windows: &[MotionWindow]) -> Result<EncodedMotion, ModelError> {
        if windows.is_empty() {
            return Err(ModelError::Config("no windows to encode".into()));
        }
        let per_window = windows.iter().map(|w| self.encode_motion(g, w)).collect::<Result<Vec<_>, _>>()?;
        let mut levels = Vec::with_capacity(self.config.levels.len());
        for (li, &l) in self.config.levels.iter().enumerate() {
            let parts: Vec<Var> = per_window.iter().map(|w| w[li].1).collect();
            let v = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts)? };
            levels.push((l, v));
        }
        let final_features = levels.iter().find(|(l, _)| *l == LevelId::Final).expect("validated").1;
        let positions = g.shape(final_features)[0];
        let mut shared = Vec::new();
        for (pi, l) in self.config.pool_levels().into_iter().enumerate() {
            if l == LevelId::Final {
                shared.push(None);
                continue;
            }
            let src = levels.iter().find(|(x, _)| *x == l).expect("pool level is configured").1;
            shared.push(Some(self.pool_kv(g, src, pi)?));
        }
        Ok(EncodedMotion { final_features, levels, shared, positions })
    }

    /// Projected, level-tagged features turned into read keys and values.
    fn pool_kv(&self, g: &mut Graph<T>, src: Var, level_index: usize) -> Result<(Var, Var), ModelError> {
        let (w, b) = self.ids.level_proj[level_index];
        let (w, b) = (self.p(g, w), self.p(g, b));
        let mut h = g.linear(src, w, Some(b))?;
        if let Some(tag) = self.ids.level_tag {
            let table = self.p(g, tag);
            let row = g.gather(table, &[level_index])?;
            h = g.add_row(h, row)?;
        }
        let (wk, wv) = (self.p(g, self.ids.read.wk), self.p(g, self.ids.read.wv));
        Ok((g.matmul(h, wk)?, g.matmul(h, wv)?))
    }

    /// Question features `f_t` (tokens x d), or a single pooled row.
    pub fn encode_text(&self, g: &mut Graph<T>, token_ids: &[usize]) -> Result<Var, ModelError> {
        let ids: Vec<usize> = if token_ids.is_empty() { vec![0] } else { token_ids.to_vec() };
        let table = self.p(g, self.ids.tok_emb);
        let x = g.gather(table, &ids)?;
        let positions: Vec<f64> = (0..ids.len()).map(|i| i as f64).collect();
        let pos = g.input(sinusoid(&positions, self.config.d));
        let x = g.add(x, pos)?;
        let x = match &self.ids.text_block {
            Some(b) => self.block(g, x, b)?,
            None => g.mean_rows(x)?,
        };
        self.ln(g, x, &self.ids.text_ln)
    }

    pub fn encode_qtype(&self, g: &mut Graph<T>, qtype: QuestionType) -> Result<Var, ModelError> {
        let ids = self.text_vocab.encode(super::qtype_phrase(qtype));
        self.encode_text(g, &ids)
    }

    /// Text-aware motion features: attend to the question, then to the
    /// question type, each with residual and layer norm.
    pub fn fuse(&self, g: &mut Graph<T>, f_m: Var, f_t: Var, qtype_feats: Var) -> Result<Var, ModelError> {
        let (h, _) = self.attend(g, f_m, f_t, &self.ids.fuse_text)?;
        let (h, _) = self.attend(g, h, qtype_feats, &self.ids.fuse_qtype)?;
        Ok(h)
    }

    /// [`Self::fuse`] with the intermediate values exposed.
    pub fn fuse_traced(&self, g: &mut Graph<T>, f_m: Var, f_t: Var, qtype_feats: Var) -> Result<FusionTrace, ModelError> {
        let (text_out, text_weights, text_pre) = self.attend_traced(g, f_m, f_t, &self.ids.fuse_text)?;
        let (h_m, qtype_weights, _) = self.attend_traced(g, text_out, qtype_feats, &self.ids.fuse_qtype)?;
        Ok(FusionTrace { text_pre, text_weights, text_out, qtype_weights, h_m })
    }

    /// Value projection of `kv` under the text-fusion attention.
    pub fn fuse_text_values(&self, g: &mut Graph<T>, kv: Var) -> Result<Var, ModelError> {
        let wv = self.p(g, self.ids.fuse_text.wv);
        Ok(g.matmul(kv, wv)?)
    }

    /// Value projection of `kv` under the dependency attention.
    pub fn dep_values(&self, g: &mut Graph<T>, kv: Var) -> Result<Var, ModelError> {
        let wv = self.p(g, self.ids.dep.wv);
        Ok(g.matmul(kv, wv)?)
    }

    /// One row per program step.
    pub fn embed_program(&self, g: &mut Graph<T>, program: &Program) -> Result<Var, ModelError> {
        let steps = program.steps();
        let funcs: Vec<usize> = steps.iter().map(|s| s.func.index()).collect();
        let concepts = steps.iter().map(|s| self.concept_index(s.concept.as_ref())).collect::<Result<Vec<_>, _>>()?;
        let (fe, ce, cp) = (self.p(g, self.ids.func_emb), self.p(g, self.ids.concept_emb), self.p(g, self.ids.concept_proj));
        let f = g.gather(fe, &funcs)?;
        let c = g.gather(ce, &concepts)?;
        let c = g.matmul(c, cp)?;
        let x = g.add(f, c)?;
        self.ln(g, x, &self.ids.prog_ln)
    }

    /// Control vectors of the MacControl variant: learned step queries
    /// attending over question words.
    fn mac_control(&self, g: &mut Graph<T>, f_t: Var) -> Result<Var, ModelError> {
        let (queries, ids) = self.ids.mac.as_ref().expect("MacControl variant has control parameters");
        let q = self.p(g, *queries);
        Ok(self.attend(g, q, f_t, ids)?.0)
    }

    /// One reasoning iteration: dependency attention over the selected
    /// memories, then program-guided reading of the pool.
    pub fn reason_step(
        &self,
        g: &mut Graph<T>,
        step_vec: Var,
        memories: &[Var],
        memory_ids: &[usize],
        pool_k: Var,
        pool_v: Var,
    ) -> Result<StepOutput, ModelError> {
        let selected: Vec<Var> = memory_ids.iter().map(|&i| memories[i]).collect();
        let m = if selected.len() == 1 { selected[0] } else { g.concat_rows(&selected)? };
        let (s_prime, dep_w, dep_pre) = self.attend_traced(g, step_vec, m, &self.ids.dep)?;
        let wq = self.p(g, self.ids.read.wq);
        let q = g.matmul(s_prime, wq)?;
        let heads = self.config.read_heads;
        let (r, read_w) = if heads == 1 {
            g.attention(q, pool_k, pool_v)?
        } else {
            let dh = self.config.d / heads;
            let (mut outs, mut weights) = (Vec::with_capacity(heads), Vec::with_capacity(heads));
            for i in 0..heads {
                let qi = g.slice_cols(q, i * dh, dh)?;
                let ki = g.slice_cols(pool_k, i * dh, dh)?;
                let vi = g.slice_cols(pool_v, i * dh, dh)?;
                let (o, w) = g.attention(qi, ki, vi)?;
                outs.push(o);
                weights.push(w);
            }
            let w = g.sum(&weights)?;
            (g.concat_cols(&outs)?, g.scale(w, T::of(1.0 / heads as f64)))
        };
        let s = g.add(s_prime, r)?;
        let s = self.ln(g, s, &self.ids.read.ln)?;
        Ok(StepOutput { s_prime, s, dep_weights: dep_w, dep_pre, read_weights: read_w })
    }

    /// Answers one question over an encoded motion.
    pub fn answer(
        &self,
        g: &mut Graph<T>,
        enc: &EncodedMotion,
        question: &str,
        program: &Program,
    ) -> Result<Forward, ModelError> {
        let qtype = program.question_type();
        let head = self.ids.heads.get(&qtype).ok_or(ModelError::EmptyBranch(qtype))?.clone();
        let f_t = self.encode_text(g, &self.text_vocab.encode(question))?;
        let qt = self.encode_qtype(g, qtype)?;
        let h_m = self.fuse(g, enc.final_features, f_t, qt)?;
        let pool_levels = self.config.pool_levels();
        let mut ks = Vec::with_capacity(pool_levels.len());
        let mut vs = Vec::with_capacity(pool_levels.len());
        for (pi, shared) in enc.shared.iter().enumerate() {
            let (k, v) = match shared {
                Some(kv) => *kv,
                None => self.pool_kv(g, h_m, pi)?,
            };
            ks.push(k);
            vs.push(v);
        }
        let (pool_k, pool_v) =
            if ks.len() == 1 { (ks[0], vs[0]) } else { (g.concat_rows(&ks)?, g.concat_rows(&vs)?) };

        let (step_vecs, deps): (Var, Vec<Vec<usize>>) = match self.config.variant {
            Variant::MacControl => {
                let n = self.config.mac_steps;
                (self.mac_control(g, f_t)?, (0..n).map(|k| (0..=k).collect()).collect())
            }
            _ => {
                let p = self.embed_program(g, program)?;
                let deps = program
                    .steps()
                    .iter()
                    .enumerate()
                    .map(|(k, s)| match self.config.dep_mask {
                        DepMask::AllPrior => (0..=k).collect(),
                        DepMask::Dependencies if s.deps.is_empty() => vec![0],
                        DepMask::Dependencies => s.deps.iter().map(|d| d + 1).collect(),
                    })
                    .collect();
                (p, deps)
            }
        };
        let s0 = self.p(g, self.ids.s0);
        let mut memories = vec![s0];
        let mut refined = Vec::with_capacity(deps.len());
        let mut steps = Vec::with_capacity(deps.len());
        for (k, memory_ids) in deps.into_iter().enumerate() {
            let pk = g.slice_rows(step_vecs, k, 1)?;
            let out = self.reason_step(g, pk, &memories, &memory_ids, pool_k, pool_v)?;
            refined.push(out.s_prime);
            memories.push(out.s);
            steps.push(StepVars { memory_ids, dep_weights: out.dep_weights, dep_pre: out.dep_pre, read_weights: out.read_weights });
        }
        let last = *memories.last().expect("at least S_0");
        let (w1, b1, w2, b2) = (self.p(g, head.w1), self.p(g, head.b1), self.p(g, head.w2), self.p(g, head.b2));
        let h = g.linear(last, w1, Some(b1))?;
        let h = g.gelu(h);
        let logits = g.linear(h, w2, Some(b2))?;
        Ok(Forward {
            qtype,
            logits,
            f_t,
            h_m,
            program_embedding: step_vecs,
            memories,
            refined,
            steps,
            pool_levels,
            positions: enc.positions,
        })
    }

    /// Encodes `windows` and answers one question.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        windows: &[MotionWindow],
        question: &str,
        program: &Program,
    ) -> Result<Forward, ModelError> {
        let enc = self.encode_windows(g, windows)?;
        self.answer(g, &enc, question, program)
    }

    /// Cross-entropy of the answer under the selected branch.
    pub fn loss(&self, g: &mut Graph<T>, fwd: &Forward, answer: &str) -> Result<Var, ModelError> {
        let idx = self
            .answers
            .index(fwd.qtype, answer)
            .ok_or_else(|| ModelError::UnknownConcept(format!("{answer} (not a {} answer)", fwd.qtype)))?;
        Ok(g.cross_entropy(fwd.logits, idx)?)
    }
}
