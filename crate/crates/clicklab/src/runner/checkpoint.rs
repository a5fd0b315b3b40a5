//! Single-file checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "CLKCKPT1"
//! u32     config JSON length, then that many UTF-8 bytes
//! u32     parameter count
//! per parameter:
//!   u32   name length, then that many UTF-8 bytes
//!   u32   rank, then rank x u64 dims
//!   f64   row-major values (product of dims)
//! ```
//!
//! The decoder never trusts a declared length: every read is bounds-checked
//! against the remaining input and allocations are capped by what the buffer
//! could actually hold, so arbitrary bytes decode to an error, not a panic.

use std::path::Path;

use thiserror::Error;

use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"CLKCKPT1";
const MAX_NAME_LEN: usize = 1 << 16;
const MAX_RANK: usize = 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint malformed: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config_json: String,
    pub params: Vec<(String, Tensor)>,
}

pub fn encode_checkpoint(config_json: &str, store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    out.extend_from_slice(config_json.as_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, param) in store.iter() {
        out.extend_from_slice(&(param.name.len() as u32).to_le_bytes());
        out.extend_from_slice(param.name.as_bytes());
        out.extend_from_slice(&(param.tensor.shape().len() as u32).to_le_bytes());
        for &d in param.tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in param.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(
    path: &Path,
    config_json: &str,
    store: &ParamStore,
) -> Result<(), CheckpointError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, encode_checkpoint(config_json, store))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path)?;
    decode_checkpoint(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Malformed(format!(
                "truncated: needed {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn utf8(&mut self, len: usize) -> Result<String, CheckpointError> {
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| CheckpointError::Malformed("invalid UTF-8".to_string()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(CheckpointError::Malformed("bad magic".to_string()));
    }
    let config_len = r.u32()? as usize;
    if config_len > r.remaining() {
        return Err(CheckpointError::Malformed(format!(
            "config length {config_len} exceeds remaining {}",
            r.remaining()
        )));
    }
    let config_json = r.utf8(config_len)?;

    let n_params = r.u32()? as usize;
    let mut params = Vec::new();
    for i in 0..n_params {
        let name_len = r.u32()? as usize;
        if name_len > MAX_NAME_LEN || name_len > r.remaining() {
            return Err(CheckpointError::Malformed(format!(
                "parameter {i}: name length {name_len} out of bounds"
            )));
        }
        let name = r.utf8(name_len)?;
        let rank = r.u32()? as usize;
        if rank > MAX_RANK {
            return Err(CheckpointError::Malformed(format!(
                "parameter `{name}`: rank {rank} exceeds {MAX_RANK}"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let d = r.u64()?;
            let d = usize::try_from(d)
                .map_err(|_| CheckpointError::Malformed(format!("parameter `{name}`: huge dim")))?;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| CheckpointError::Malformed(format!("parameter `{name}`: overflow")))?;
            shape.push(d);
        }
        if numel > r.remaining() / 8 {
            return Err(CheckpointError::Malformed(format!(
                "parameter `{name}`: {numel} values exceed remaining bytes"
            )));
        }
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
        }
        let tensor = Tensor::new(shape, data)
            .map_err(|e| CheckpointError::Malformed(format!("parameter `{name}`: {e}")))?;
        params.push((name, tensor));
    }
    if r.remaining() != 0 {
        return Err(CheckpointError::Malformed(format!(
            "{} trailing bytes",
            r.remaining()
        )));
    }
    Ok(Checkpoint {
        config_json,
        params,
    })
}
