//! Binary motion files plus a JSON annotation sidecar.
//!
//! Layout (little-endian): `b"IMOM"`, `u32` version (1), `i32` T, `i32` J,
//! then `T * J * 3` `f32` values ordered frame, joint, axis.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MotionError, MotionSequence, SegmentAnnotation};

const MAGIC: &[u8; 4] = b"IMOM";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    id: String,
    frames: usize,
    joints: usize,
    segments: Vec<SegmentAnnotation>,
}

/// `walk.imom` -> `walk.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MotionError + '_ {
    move |source| MotionError::Io { path: path.display().to_string(), source }
}

pub fn write_motion(path: &Path, motion: &MotionSequence) -> Result<(), MotionError> {
    motion.validate()?;
    let t = motion.num_frames();
    let mut bytes = Vec::with_capacity(HEADER_LEN + motion.frames.len() * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(t as i32).to_le_bytes());
    bytes.extend_from_slice(&(motion.num_joints as i32).to_le_bytes());
    for v in &motion.frames {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(io_err(path))?;
    let sidecar = Sidecar { id: motion.id.clone(), frames: t, joints: motion.num_joints, segments: motion.segments.clone() };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(&side, text).map_err(io_err(&side))
}

pub fn read_motion(path: &Path) -> Result<MotionSequence, MotionError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < HEADER_LEN {
        return Err(MotionError::Format(format!("{}: file shorter than header", path.display())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(MotionError::Format(format!("{}: bad magic", path.display())));
    }
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    let version = u32::from_le_bytes(word(4));
    if version != VERSION {
        return Err(MotionError::Format(format!("{}: unsupported version {version}", path.display())));
    }
    let t = i32::from_le_bytes(word(8));
    let j = i32::from_le_bytes(word(12));
    if t < 0 || j <= 0 {
        return Err(MotionError::Format(format!("{}: bad dimensions T={t} J={j}", path.display())));
    }
    let count = t as usize * j as usize * 3;
    if bytes.len() != HEADER_LEN + count * 4 {
        return Err(MotionError::Format(format!(
            "{}: expected {} payload bytes, found {}",
            path.display(),
            count * 4,
            bytes.len() - HEADER_LEN
        )));
    }
    let frames = bytes[HEADER_LEN..].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();

    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(io_err(&side))?;
    let sidecar: Sidecar =
        serde_json::from_str(&text).map_err(|e| MotionError::Format(format!("{}: {e}", side.display())))?;
    if sidecar.frames != t as usize || sidecar.joints != j as usize {
        return Err(MotionError::Format(format!("{}: sidecar shape disagrees with binary", side.display())));
    }
    let motion = MotionSequence { id: sidecar.id, num_joints: j as usize, frames, segments: sidecar.segments };
    motion.validate()?;
    Ok(motion)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{generate_sequence, SynthConfig};

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_sequence(3, &SynthConfig::default()).unwrap();
        let path = dir.path().join("m.imom");
        write_motion(&path, &m).unwrap();
        let back = read_motion(&path).unwrap();
        assert_eq!(back.id, m.id);
        assert_eq!(back.segments, m.segments);
        assert!(back.frames.iter().zip(&m.frames).all(|(a, b)| a.to_bits() == b.to_bits()));

        let raw = fs::read(&path).unwrap();
        assert_eq!(&raw[0..4], b"IMOM");
        assert_eq!(u32::from_le_bytes(raw[4..8].try_into().unwrap()), 1);
        assert_eq!(i32::from_le_bytes(raw[8..12].try_into().unwrap()) as usize, m.num_frames());
        assert_eq!(i32::from_le_bytes(raw[12..16].try_into().unwrap()), 17);
    }

    #[test]
    fn truncated_and_bad_magic_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_sequence(4, &SynthConfig::default()).unwrap();
        let path = dir.path().join("m.imom");
        write_motion(&path, &m).unwrap();
        let raw = fs::read(&path).unwrap();

        fs::write(&path, &raw[..raw.len() - 5]).unwrap();
        assert!(matches!(read_motion(&path), Err(MotionError::Format(_))));
        fs::write(&path, &raw[..10]).unwrap();
        assert!(matches!(read_motion(&path), Err(MotionError::Format(_))));

        let mut bad = raw.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(read_motion(&path), Err(MotionError::Format(_))));

        let mut bad = raw;
        bad[4] = 2;
        fs::write(&path, &bad).unwrap();
        assert!(matches!(read_motion(&path), Err(MotionError::Format(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_motion(Path::new("/nonexistent/x.imom")), Err(MotionError::Io { .. })));
    }
}
