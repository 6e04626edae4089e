//! Synthetic skeleton motion with exact segment annotations.

mod io;
mod primitives;
pub mod skeleton;
mod synth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::{Concept, ConceptKind};

pub use io::{read_motion, sidecar_path, write_motion};
pub use primitives::{primitive_library, MotionPrimitive, PrimitiveParams, Profile, Stroke};
pub use synth::{generate_sequence, SynthConfig};

#[derive(Debug, Error)]
pub enum MotionError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid motion: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSegment", into = "RawSegment")]
pub struct SegmentAnnotation {
    pub start_frame: usize,
    /// Exclusive.
    pub end_frame: usize,
    pub action: Concept,
    pub direction: Option<Concept>,
    pub body_parts: Vec<Concept>,
    pub primary_body_part: Concept,
}

impl SegmentAnnotation {
    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        self.end_frame <= self.start_frame
    }

    /// Whether this segment matches a filter on `concept`: equality for
    /// actions and directions, membership for body parts.
    pub fn matches(&self, concept: &Concept) -> bool {
        match concept.kind {
            ConceptKind::Action => self.action == *concept,
            ConceptKind::Direction => self.direction.as_ref() == Some(concept),
            ConceptKind::BodyPart => self.body_parts.contains(concept),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawSegment {
    start_frame: usize,
    end_frame: usize,
    action: String,
    direction: Option<String>,
    body_parts: Vec<String>,
    primary_body_part: String,
}

impl TryFrom<RawSegment> for SegmentAnnotation {
    type Error = String;

    fn try_from(r: RawSegment) -> Result<Self, String> {
        let bp = |l: String| Concept::new(ConceptKind::BodyPart, l);
        let seg = SegmentAnnotation {
            start_frame: r.start_frame,
            end_frame: r.end_frame,
            action: Concept::new(ConceptKind::Action, r.action),
            direction: r.direction.map(|d| Concept::new(ConceptKind::Direction, d)),
            body_parts: r.body_parts.into_iter().map(bp).collect(),
            primary_body_part: bp(r.primary_body_part),
        };
        if seg.start_frame >= seg.end_frame {
            return Err(format!("empty segment [{}, {})", seg.start_frame, seg.end_frame));
        }
        if seg.body_parts.is_empty() || !seg.body_parts.contains(&seg.primary_body_part) {
            return Err("primary body part must be one of the listed body parts".into());
        }
        Ok(seg)
    }
}

impl From<SegmentAnnotation> for RawSegment {
    fn from(s: SegmentAnnotation) -> Self {
        RawSegment {
            start_frame: s.start_frame,
            end_frame: s.end_frame,
            action: s.action.label,
            direction: s.direction.map(|d| d.label),
            body_parts: s.body_parts.into_iter().map(|c| c.label).collect(),
            primary_body_part: s.primary_body_part.label,
        }
    }
}

/// A `T x J x 3` joint trajectory, row-major by frame then joint.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub id: String,
    pub num_joints: usize,
    pub frames: Vec<f32>,
    pub segments: Vec<SegmentAnnotation>,
}

impl MotionSequence {
    pub fn num_frames(&self) -> usize {
        if self.num_joints == 0 {
            0
        } else {
            self.frames.len() / (self.num_joints * 3)
        }
    }

    pub fn joint(&self, frame: usize, joint: usize) -> [f32; 3] {
        let o = (frame * self.num_joints + joint) * 3;
        [self.frames[o], self.frames[o + 1], self.frames[o + 2]]
    }

    pub fn frame(&self, frame: usize) -> &[f32] {
        let stride = self.num_joints * 3;
        &self.frames[frame * stride..(frame + 1) * stride]
    }

    /// Checks shape, segment cover and annotation consistency.
    pub fn validate(&self) -> Result<(), MotionError> {
        let t = self.num_frames();
        if self.num_joints == 0 || self.frames.len() != t * self.num_joints * 3 {
            return Err(MotionError::Invalid("frame buffer is not T x J x 3".into()));
        }
        let mut cursor = 0;
        for (i, s) in self.segments.iter().enumerate() {
            if s.start_frame != cursor {
                return Err(MotionError::Invalid(format!("segment {i} starts at {} but cover is at {cursor}", s.start_frame)));
            }
            if s.end_frame <= s.start_frame || s.end_frame > t {
                return Err(MotionError::Invalid(format!("segment {i} has bad span [{}, {})", s.start_frame, s.end_frame)));
            }
            if !s.body_parts.contains(&s.primary_body_part) {
                return Err(MotionError::Invalid(format!("segment {i} primary part not listed")));
            }
            cursor = s.end_frame;
        }
        if cursor != t {
            return Err(MotionError::Invalid(format!("segments cover [0, {cursor}) but T = {t}")));
        }
        Ok(())
    }
}
