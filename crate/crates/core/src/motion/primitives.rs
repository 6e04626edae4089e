//! Parametric motion primitives over the neutral pose.
//!
//! A primitive is a list of strokes. Each stroke moves a set of joints along
//! an axis with one of a few analytic profiles. Every joint of every driven
//! body part receives at least one oscillating stroke, which keeps driven
//! joints visibly more active than the rest of the skeleton.

use std::f32::consts::PI;

use super::skeleton::{body_part_joints, NUM_JOINTS};
use crate::vocab::{Concept, ConceptKind, ConceptVocabulary};

const LEFT: [f32; 3] = [1.0, 0.0, 0.0];
const RIGHT: [f32; 3] = [-1.0, 0.0, 0.0];
const UP: [f32; 3] = [0.0, 1.0, 0.0];
const DOWN: [f32; 3] = [0.0, -1.0, 0.0];
const FORWARD: [f32; 3] = [0.0, 0.0, 1.0];
const BACKWARD: [f32; 3] = [0.0, 0.0, -1.0];
const TREMOR_AXIS: [f32; 3] = [0.6, 0.0, 0.8];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Profile {
    /// Linear drift from 0 to the amplitude over the segment.
    Ramp,
    /// Single half-sine bump, zero at both ends.
    Pulse,
    /// `cycles` full sine periods with a random phase.
    Oscillate { cycles: f32 },
    /// Rectified sine: `cycles` hops that never go below zero.
    Bounce { cycles: f32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stroke {
    pub parts: Vec<&'static str>,
    pub axis: [f32; 3],
    pub amplitude: f32,
    pub profile: Profile,
}

/// Per-segment random parameters of a primitive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimitiveParams {
    pub scale: f32,
    pub phase: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionPrimitive {
    pub name: Concept,
    pub direction: Option<Concept>,
    pub driven_parts: Vec<Concept>,
    pub primary_part: Concept,
    pub strokes: Vec<Stroke>,
}

impl MotionPrimitive {
    /// Joint offsets at normalized time `u` in [0, 1].
    pub fn offsets(&self, u: f32, params: PrimitiveParams) -> [[f32; 3]; NUM_JOINTS] {
        let mut out = [[0.0f32; 3]; NUM_JOINTS];
        for stroke in &self.strokes {
            let a = stroke.amplitude * params.scale;
            let w = match stroke.profile {
                Profile::Ramp => u,
                Profile::Pulse => (PI * u).sin(),
                Profile::Oscillate { cycles } => (2.0 * PI * cycles * u + params.phase).sin(),
                Profile::Bounce { cycles } => (PI * cycles * u).sin().abs(),
            };
            for part in &stroke.parts {
                for &j in body_part_joints(part).expect("strokes name known body parts") {
                    for (o, ax) in out[j].iter_mut().zip(stroke.axis) {
                        *o += a * w * ax;
                    }
                }
            }
        }
        out
    }

    /// A short label distinguishing side variants, e.g. `raise_arm/left_arm`.
    pub fn variant_name(&self) -> String {
        match &self.direction {
            Some(d) => format!("{}/{}/{}", self.name.label, d.label, self.primary_part.label),
            None => format!("{}/{}", self.name.label, self.primary_part.label),
        }
    }
}

fn stroke(parts: &[&'static str], axis: [f32; 3], amplitude: f32, profile: Profile) -> Stroke {
    Stroke { parts: parts.to_vec(), axis, amplitude, profile }
}

fn osc(cycles: f32) -> Profile {
    Profile::Oscillate { cycles }
}

struct Spec {
    action: &'static str,
    direction: Option<&'static str>,
    parts: &'static [&'static str],
    primary: &'static str,
    strokes: Vec<Stroke>,
}

fn catalogue() -> Vec<Spec> {
    const LEGS: [&str; 4] = ["left_leg", "left_foot", "right_leg", "right_foot"];
    let mut out = vec![
        Spec {
            action: "walk",
            direction: Some("forward"),
            parts: &["torso", "left_leg", "left_foot", "right_leg", "right_foot"],
            primary: "left_leg",
            strokes: vec![
                stroke(&["torso", "left_leg", "left_foot", "right_leg", "right_foot"], FORWARD, 0.6, Profile::Ramp),
                stroke(&["torso"], UP, 0.04, osc(4.0)),
                stroke(&["left_leg", "left_foot"], FORWARD, 0.18, osc(2.0)),
                stroke(&["right_leg", "right_foot"], BACKWARD, 0.18, osc(2.0)),
            ],
        },
        Spec {
            action: "step",
            direction: Some("left"),
            parts: &["torso", "left_leg", "left_foot"],
            primary: "left_foot",
            strokes: vec![
                stroke(&["torso", "left_leg", "left_foot"], LEFT, 0.35, Profile::Ramp),
                stroke(&["torso", "left_leg"], UP, 0.05, osc(1.5)),
                stroke(&["left_foot"], UP, 0.15, Profile::Bounce { cycles: 2.0 }),
                stroke(&["left_foot"], LEFT, 0.06, osc(2.0)),
            ],
        },
        Spec {
            action: "step",
            direction: Some("right"),
            parts: &["torso", "right_leg", "right_foot"],
            primary: "right_foot",
            strokes: vec![
                stroke(&["torso", "right_leg", "right_foot"], RIGHT, 0.35, Profile::Ramp),
                stroke(&["torso", "right_leg"], UP, 0.05, osc(1.5)),
                stroke(&["right_foot"], UP, 0.15, Profile::Bounce { cycles: 2.0 }),
                stroke(&["right_foot"], RIGHT, 0.06, osc(2.0)),
            ],
        },
        Spec {
            action: "step",
            direction: Some("backward"),
            parts: &["torso", "left_leg", "left_foot", "right_leg", "right_foot"],
            primary: "right_leg",
            strokes: vec![
                stroke(&["torso"], BACKWARD, 0.4, Profile::Ramp),
                stroke(&LEGS, BACKWARD, 0.4, Profile::Ramp),
                stroke(&["torso"], UP, 0.05, osc(1.0)),
                stroke(&["right_leg", "right_foot"], UP, 0.12, Profile::Bounce { cycles: 1.0 }),
                stroke(&["left_leg", "left_foot"], UP, 0.08, Profile::Bounce { cycles: 2.0 }),
            ],
        },
        Spec {
            action: "kick",
            direction: Some("forward"),
            parts: &["left_leg", "left_foot"],
            primary: "left_leg",
            strokes: vec![
                stroke(&["left_leg", "left_foot"], FORWARD, 0.35, Profile::Pulse),
                stroke(&["left_foot"], UP, 0.3, Profile::Pulse),
                stroke(&["left_leg", "left_foot"], UP, 0.06, osc(1.0)),
            ],
        },
        Spec {
            action: "kick",
            direction: Some("forward"),
            parts: &["right_leg", "right_foot"],
            primary: "right_leg",
            strokes: vec![
                stroke(&["right_leg", "right_foot"], FORWARD, 0.35, Profile::Pulse),
                stroke(&["right_foot"], UP, 0.3, Profile::Pulse),
                stroke(&["right_leg", "right_foot"], UP, 0.06, osc(1.0)),
            ],
        },
        Spec {
            action: "squat",
            direction: Some("down"),
            parts: &["torso", "left_leg", "right_leg"],
            primary: "torso",
            strokes: vec![
                stroke(&["torso"], DOWN, 0.4, Profile::Pulse),
                stroke(&["left_leg", "right_leg"], FORWARD, 0.15, Profile::Pulse),
                stroke(&["left_leg", "right_leg"], DOWN, 0.15, Profile::Pulse),
                stroke(&["torso", "left_leg", "right_leg"], FORWARD, 0.04, osc(2.0)),
            ],
        },
        Spec {
            action: "nod",
            direction: Some("down"),
            parts: &["head"],
            primary: "head",
            strokes: vec![
                stroke(&["head"], DOWN, 0.08, Profile::Bounce { cycles: 3.0 }),
                stroke(&["head"], FORWARD, 0.06, osc(3.0)),
            ],
        },
        Spec {
            action: "jump",
            direction: Some("up"),
            parts: &["torso", "left_leg", "left_foot", "right_leg", "right_foot"],
            primary: "torso",
            strokes: vec![
                stroke(&["torso", "left_leg", "left_foot", "right_leg", "right_foot"], UP, 0.35, Profile::Bounce {
                    cycles: 2.0,
                }),
                stroke(&LEGS, FORWARD, 0.05, osc(2.0)),
                stroke(&["torso"], FORWARD, 0.04, osc(2.0)),
            ],
        },
    ];
    for (side, arm, hand, lateral) in [("left", "left_arm", "left_hand", LEFT), ("right", "right_arm", "right_hand", RIGHT)] {
        let arm_parts: &'static [&'static str] = if side == "left" { &["left_arm", "left_hand"] } else { &["right_arm", "right_hand"] };
        out.push(Spec {
            action: "raise_arm",
            direction: Some("up"),
            parts: arm_parts,
            primary: arm,
            strokes: vec![
                stroke(&[arm, hand], UP, 0.5, Profile::Ramp),
                stroke(&[hand], UP, 0.25, Profile::Ramp),
                stroke(&[arm, hand], lateral, 0.06, osc(1.0)),
            ],
        });
        out.push(Spec {
            action: "wave",
            direction: None,
            parts: arm_parts,
            primary: hand,
            strokes: vec![
                stroke(&[arm, hand], UP, 0.3, Profile::Pulse),
                stroke(&[hand], UP, 0.25, Profile::Pulse),
                stroke(&[hand], LEFT, 0.2, osc(3.0)),
                stroke(&[arm], LEFT, 0.06, osc(3.0)),
            ],
        });
        out.push(Spec {
            action: "pick_up",
            direction: Some("down"),
            parts: if side == "left" { &["torso", "left_arm", "left_hand"] } else { &["torso", "right_arm", "right_hand"] },
            primary: hand,
            strokes: vec![
                stroke(&["torso"], DOWN, 0.25, Profile::Pulse),
                stroke(&[arm, hand], DOWN, 0.45, Profile::Pulse),
                stroke(&[hand], FORWARD, 0.15, Profile::Pulse),
                stroke(&["torso", arm, hand], FORWARD, 0.04, osc(2.0)),
            ],
        });
        out.push(Spec {
            action: "turn",
            direction: Some(side),
            parts: &["torso", "head"],
            primary: "torso",
            strokes: vec![
                stroke(&["torso", "head"], lateral, 0.2, Profile::Ramp),
                stroke(&["head"], lateral, 0.08, Profile::Ramp),
                stroke(&["torso", "head"], FORWARD, 0.05, osc(1.0)),
            ],
        });
    }
    out.push(Spec {
        action: "sit",
        direction: Some("down"),
        parts: &["torso", "left_leg", "right_leg"],
        primary: "torso",
        strokes: vec![
            stroke(&["torso"], DOWN, 0.45, Profile::Ramp),
            stroke(&["torso"], BACKWARD, 0.15, Profile::Ramp),
            stroke(&["left_leg", "right_leg"], FORWARD, 0.2, Profile::Ramp),
            stroke(&["torso", "left_leg", "right_leg"], UP, 0.04, osc(1.0)),
        ],
    });
    out.push(Spec {
        action: "stand",
        direction: Some("up"),
        parts: &["torso", "left_leg", "right_leg"],
        primary: "torso",
        strokes: vec![
            stroke(&["torso"], UP, 0.45, Profile::Ramp),
            stroke(&["left_leg", "right_leg"], BACKWARD, 0.2, Profile::Ramp),
            stroke(&["torso", "left_leg", "right_leg"], FORWARD, 0.04, osc(1.0)),
        ],
    });
    out.push(Spec {
        action: "crawl",
        direction: Some("forward"),
        parts: &["torso", "left_arm", "left_hand", "right_arm", "right_hand", "left_leg", "right_leg"],
        primary: "torso",
        strokes: vec![
            stroke(&["torso", "left_arm", "left_hand", "right_arm", "right_hand", "left_leg", "right_leg"], FORWARD, 0.4, Profile::Ramp),
            stroke(&["torso"], DOWN, 0.5, Profile::Pulse),
            stroke(&["left_arm", "left_hand", "right_leg"], FORWARD, 0.12, osc(2.0)),
            stroke(&["right_arm", "right_hand", "left_leg"], BACKWARD, 0.12, osc(2.0)),
            stroke(&["torso"], UP, 0.04, osc(2.0)),
        ],
    });
    out
}

/// Primitives for every action in `vocab.actions`, including side variants.
/// Actions without a built-in primitive are skipped.
pub fn primitive_library(vocab: &ConceptVocabulary) -> Vec<MotionPrimitive> {
    catalogue()
        .into_iter()
        .filter(|s| vocab.contains(ConceptKind::Action, s.action))
        .filter(|s| s.direction.map_or(true, |d| vocab.contains(ConceptKind::Direction, d)))
        .filter(|s| s.parts.iter().all(|p| vocab.contains(ConceptKind::BodyPart, p)))
        .map(|s| {
            let mut strokes = s.strokes;
            // shared tremor keeps every driven joint well above sensor noise
            strokes.push(stroke(s.parts, TREMOR_AXIS, 0.08, osc(2.5)));
            MotionPrimitive {
                name: Concept::new(ConceptKind::Action, s.action),
                direction: s.direction.map(|d| Concept::new(ConceptKind::Direction, d)),
                driven_parts: s.parts.iter().map(|p| Concept::new(ConceptKind::BodyPart, *p)).collect(),
                primary_part: Concept::new(ConceptKind::BodyPart, s.primary),
                strokes,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{DEFAULT_BODY_PARTS, DEFAULT_DIRECTIONS};
    use std::collections::BTreeSet;

    #[test]
    fn compact_library_covers_labels() {
        let lib = primitive_library(&ConceptVocabulary::compact());
        let actions: BTreeSet<_> = lib.iter().map(|p| p.name.label.as_str()).collect();
        assert_eq!(actions.len(), 8);
        let dirs: BTreeSet<_> = lib.iter().filter_map(|p| p.direction.as_ref()).map(|d| d.label.as_str()).collect();
        assert_eq!(dirs, DEFAULT_DIRECTIONS.into_iter().collect());
        let primaries: BTreeSet<_> = lib.iter().map(|p| p.primary_part.label.as_str()).collect();
        assert_eq!(primaries, DEFAULT_BODY_PARTS.into_iter().collect());
    }

    #[test]
    fn full_library_has_leg_only_and_arm_only_actions() {
        let lib = primitive_library(&ConceptVocabulary::full());
        assert!(lib.len() >= 8);
        let only = |allowed: &[&str]| {
            lib.iter().any(|p| p.driven_parts.iter().all(|c| allowed.contains(&c.label.as_str())))
        };
        assert!(only(&["left_leg", "left_foot", "right_leg", "right_foot"]));
        assert!(only(&["left_arm", "left_hand", "right_arm", "right_hand"]));
    }

    #[test]
    fn every_driven_joint_oscillates_and_only_driven_joints_move() {
        for p in primitive_library(&ConceptVocabulary::full()) {
            assert!(p.driven_parts.contains(&p.primary_part), "{}", p.variant_name());
            let driven: BTreeSet<usize> = p
                .driven_parts
                .iter()
                .flat_map(|c| body_part_joints(&c.label).unwrap().iter().copied())
                .collect();
            let stroked: BTreeSet<usize> = p
                .strokes
                .iter()
                .flat_map(|s| s.parts.iter().flat_map(|l| body_part_joints(l).unwrap().iter().copied()))
                .collect();
            assert_eq!(driven, stroked, "{}", p.variant_name());
        }
    }

    #[test]
    fn step_left_moves_root_left() {
        let lib = primitive_library(&ConceptVocabulary::full());
        let step_left = lib
            .iter()
            .find(|p| p.name.label == "step" && p.direction.as_ref().map(|d| d.label.as_str()) == Some("left"))
            .unwrap();
        // Root x over the segment: ramp 0.35 plus the tremor's x share,
        // 0.08 * 0.6 * (sin(5pi + phase) - sin(phase)) = -0.096 sin(phase).
        // Positive for every admissible scale and phase.
        for (scale, phase) in [(0.8f32, 0.0f32), (1.0, 1.3), (1.25, 5.9), (1.0, std::f32::consts::FRAC_PI_2)] {
            let params = PrimitiveParams { scale, phase };
            let dx = p_root_x(step_left, 1.0, params) - p_root_x(step_left, 0.0, params);
            let expected = scale * (0.35 - 0.096 * phase.sin());
            assert!((dx - expected).abs() < 1e-5, "{dx} vs {expected}");
            assert!(dx > 0.0);
        }
    }

    fn p_root_x(p: &MotionPrimitive, u: f32, params: PrimitiveParams) -> f32 {
        p.offsets(u, params)[super::super::skeleton::ROOT_JOINT][0]
    }
}
