//! Whole-sequence inference: consecutive windows (Mode I) or the best of
//! several random windows (Mode II).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Graph, Scalar};
use crate::dsl::Program;
use crate::motion::MotionSequence;

use super::{ImoreModel, ModelError, MotionWindow};

/// Mode I window starts: consecutive, with the last window right-aligned.
pub fn window_starts(num_frames: usize, window: usize) -> Vec<usize> {
    if num_frames <= window {
        return vec![0];
    }
    let mut starts: Vec<usize> = (0..num_frames / window).map(|i| i * window).collect();
    if num_frames % window != 0 {
        starts.push(num_frames - window);
    }
    starts
}

/// Mode II window starts drawn uniformly from the valid range.
pub fn mode_ii_starts(num_frames: usize, window: usize, runs: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_start = num_frames.saturating_sub(window);
    (0..runs).map(|_| if max_start == 0 { 0 } else { rng.gen_range(0..=max_start) }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunScore {
    /// Largest raw logit.
    MaxLogit,
    /// Largest softmax probability.
    MaxProb,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeIIOutput<T> {
    pub logits: Vec<T>,
    pub chosen: usize,
    pub starts: Vec<usize>,
    pub scores: Vec<f64>,
}

fn score<T: Scalar>(logits: &[T], how: RunScore) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, x| m.max(x.to_f64c()));
    match how {
        RunScore::MaxLogit => max,
        RunScore::MaxProb => {
            let z: f64 = logits.iter().map(|x| (x.to_f64c() - max).exp()).sum();
            1.0 / z
        }
    }
}

impl<T: Scalar> ImoreModel<T> {
    /// `W` frames from `start`, wrapping around for short sequences.
    pub fn window_at(&self, motion: &MotionSequence, start: usize) -> Result<MotionWindow, ModelError> {
        let w = self.config.window;
        if w == 0 {
            return Err(ModelError::Config("window length must be positive".into()));
        }
        let t = motion.num_frames();
        if t == 0 {
            return Err(ModelError::Config(format!("motion {} has no frames", motion.id)));
        }
        let mut frames = Vec::with_capacity(w * motion.num_joints * 3);
        for f in start..start + w {
            frames.extend_from_slice(motion.frame(f % t));
        }
        Ok(MotionWindow { frames, start })
    }

    pub fn mode_i_windows(&self, motion: &MotionSequence) -> Result<Vec<MotionWindow>, ModelError> {
        window_starts(motion.num_frames(), self.config.window).into_iter().map(|s| self.window_at(motion, s)).collect()
    }

    /// Logits from all Mode I windows pooled together.
    pub fn infer_mode_i(&self, motion: &MotionSequence, question: &str, program: &Program) -> Result<Vec<T>, ModelError> {
        let windows = self.mode_i_windows(motion)?;
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, &windows, question, program)?;
        Ok(g.value(fwd.logits).data().to_vec())
    }

    /// Runs each sampled window separately and keeps the highest-scoring run.
    pub fn infer_mode_ii(
        &self,
        motion: &MotionSequence,
        question: &str,
        program: &Program,
        runs: usize,
        seed: u64,
        how: RunScore,
    ) -> Result<ModeIIOutput<T>, ModelError> {
        if runs == 0 {
            return Err(ModelError::Config("mode II needs at least one run".into()));
        }
        let starts = mode_ii_starts(motion.num_frames(), self.config.window, runs, seed);
        self.infer_windows_best(motion, question, program, starts, how)
    }

    /// Mode II over explicit window starts.
    pub fn infer_windows_best(
        &self,
        motion: &MotionSequence,
        question: &str,
        program: &Program,
        starts: Vec<usize>,
        how: RunScore,
    ) -> Result<ModeIIOutput<T>, ModelError> {
        let mut best: Option<(usize, Vec<T>)> = None;
        let mut scores = Vec::with_capacity(starts.len());
        for (i, &s) in starts.iter().enumerate() {
            let window = self.window_at(motion, s)?;
            let mut g = Graph::new();
            let fwd = self.forward(&mut g, std::slice::from_ref(&window), question, program)?;
            let logits = g.value(fwd.logits).data().to_vec();
            let sc = score(&logits, how);
            if best.as_ref().map_or(true, |(b, _)| sc > scores[*b]) {
                best = Some((i, logits));
            }
            scores.push(sc);
        }
        let (chosen, logits) = best.expect("at least one run");
        Ok(ModeIIOutput { logits, chosen, starts, scores })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_cover_the_sequence() {
        assert_eq!(window_starts(64, 64), vec![0]);
        assert_eq!(window_starts(40, 64), vec![0]);
        assert_eq!(window_starts(128, 64), vec![0, 64]);
        assert_eq!(window_starts(150, 64), vec![0, 64, 86]);
    }

    #[test]
    fn mode_ii_starts_are_seeded() {
        assert_eq!(mode_ii_starts(300, 64, 5, 3), mode_ii_starts(300, 64, 5, 3));
        assert!(mode_ii_starts(300, 64, 50, 1).iter().all(|&s| s <= 236));
        assert_eq!(mode_ii_starts(64, 64, 3, 9), vec![0, 0, 0]);
    }
}
