//! Named-tensor container.
//!
//! Layout (little-endian): magic `IMCK`, u32 version, u32 meta length, meta
//! bytes (UTF-8 JSON), u32 tensor count, then per tensor: u32 name length,
//! name, u8 dtype, u32 rank, u64 per dim, raw values.

use std::fs;
use std::path::Path;

use super::{DType, DiffError, ParamRegistry, Scalar, Tensor};

const MAGIC: &[u8; 4] = b"IMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializes `params` with a free-form metadata string.
pub fn encode_checkpoint<T: Scalar>(params: &ParamRegistry<T>, meta: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.numel() * T::DTYPE.width());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, p) in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(T::DTYPE.tag());
        out.extend_from_slice(&2u32.to_le_bytes());
        for d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in p.value.data() {
            match T::DTYPE {
                DType::F32 => out.extend_from_slice(&(x.to_f64c() as f32).to_le_bytes()),
                DType::F64 => out.extend_from_slice(&x.to_f64c().to_le_bytes()),
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DiffError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| DiffError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DiffError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, DiffError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Decoded container: metadata and named tensors, converted to `T`.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<(String, Vec<(String, Tensor<T>)>), DiffError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(DiffError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(DiffError::Checkpoint(format!("unsupported version {version}")));
    }
    let n = r.u32()? as usize;
    let meta = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| DiffError::Checkpoint("meta is not UTF-8".into()))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name =
            String::from_utf8(r.take(n)?.to_vec()).map_err(|_| DiffError::Checkpoint("name is not UTF-8".into()))?;
        let tag = r.take(1)?[0];
        let dtype = DType::from_tag(tag).ok_or_else(|| DiffError::Checkpoint(format!("unknown dtype {tag}")))?;
        let rank = r.u32()?;
        if rank != 2 {
            return Err(DiffError::Checkpoint(format!("`{name}` has rank {rank}")));
        }
        let (rows, cols) = (r.u64()? as usize, r.u64()? as usize);
        let numel = rows.checked_mul(cols).ok_or_else(|| DiffError::Checkpoint("shape overflow".into()))?;
        let raw = r.take(numel.checked_mul(dtype.width()).ok_or_else(|| DiffError::Checkpoint("size overflow".into()))?)?;
        let data: Vec<T> = match dtype {
            DType::F32 => raw.chunks_exact(4).map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4")) as f64)).collect(),
            DType::F64 => raw.chunks_exact(8).map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8")))).collect(),
        };
        tensors.push((name, Tensor::new(rows, cols, data)?));
    }
    if r.pos != bytes.len() {
        return Err(DiffError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((meta, tensors))
}

pub fn save_checkpoint<T: Scalar>(path: &Path, params: &ParamRegistry<T>, meta: &str) -> Result<(), DiffError> {
    fs::write(path, encode_checkpoint(params, meta))
        .map_err(|e| DiffError::Io { path: path.display().to_string(), source: e })
}

/// Reads a checkpoint into `params` (matched by name) and returns its metadata.
pub fn load_checkpoint<T: Scalar>(path: &Path, params: &mut ParamRegistry<T>) -> Result<String, DiffError> {
    let (meta, tensors) = read_checkpoint(path)?;
    params.load_values(tensors)?;
    Ok(meta)
}

pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<(String, Vec<(String, Tensor<T>)>), DiffError> {
    let bytes = fs::read(path).map_err(|e| DiffError::Io { path: path.display().to_string(), source: e })?;
    decode_checkpoint(&bytes)
}
