//! The 17-joint skeleton and its body-part partition.
//!
//! Axes: +x is the person's left, +y is up, +z is forward. Units are meters.

pub const NUM_JOINTS: usize = 17;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis",
    "spine",
    "thorax",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_hip",
    "right_knee",
    "right_ankle",
];

pub const ROOT_JOINT: usize = 0;

/// Standing rest pose.
pub const NEUTRAL_POSE: [[f32; 3]; NUM_JOINTS] = [
    [0.0, 1.00, 0.0],
    [0.0, 1.20, 0.0],
    [0.0, 1.40, 0.0],
    [0.0, 1.55, 0.0],
    [0.0, 1.70, 0.02],
    [0.18, 1.45, 0.0],
    [0.22, 1.18, 0.0],
    [0.24, 0.92, 0.02],
    [-0.18, 1.45, 0.0],
    [-0.22, 1.18, 0.0],
    [-0.24, 0.92, 0.02],
    [0.10, 0.95, 0.0],
    [0.11, 0.52, 0.02],
    [0.11, 0.08, 0.0],
    [-0.10, 0.95, 0.0],
    [-0.11, 0.52, 0.02],
    [-0.11, 0.08, 0.0],
];

/// Joints belonging to an annotation-level body part label.
pub fn body_part_joints(label: &str) -> Option<&'static [usize]> {
    Some(match label {
        "torso" => &[0, 1, 2],
        "head" => &[3, 4],
        "left_arm" => &[5, 6],
        "left_hand" => &[7],
        "right_arm" => &[8, 9],
        "right_hand" => &[10],
        "left_leg" => &[11, 12],
        "left_foot" => &[13],
        "right_leg" => &[14, 15],
        "right_foot" => &[16],
        _ => return None,
    })
}

/// Coarse groups used to patchify the skeleton for the motion encoder:
/// head+torso, left arm, right arm, left leg, right leg.
pub const PATCH_GROUPS: [&[usize]; 5] = [&[0, 1, 2, 3, 4], &[5, 6, 7], &[8, 9, 10], &[11, 12, 13], &[14, 15, 16]];
