//! Checkpoint serialization: config + named tensor table + `f32` payload.
//!
//! Layout on disk:
//!
//! ```text
//! magic "RRAGCKPT" (8 bytes)
//! header length (u64 little-endian)
//! header JSON { "config": …, "tensors": [ {name, shape, offset}, … ] }
//! payload: param_count little-endian f32 values, flat-vector order
//! ```
//!
//! Loading rebuilds the expected tensor table from the stored config and
//! verifies the file's table against it name by name — truncated files,
//! foreign architectures, and non-finite values all fail loudly rather than
//! yielding a silently wrong model. Saving is deterministic: the same model
//! always produces the same bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ModelConfig, ParamLayout, TensorSpec, TinyLm};

const MAGIC: &[u8; 8] = b"RRAGCKPT";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorSpec>,
}

/// Writes `model` to `path`, converting parameters to `f32`.
pub fn save(model: &TinyLm, path: &Path) -> Result<(), CheckpointError> {
    let header = Header {
        config: model.config().clone(),
        tensors: model.param_layout().tensors().to_vec(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for &v in model.params() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint written by [`save`], validating structure end to end.
pub fn load(path: &Path) -> Result<TinyLm, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::Header("bad magic; not a checkpoint file".into()));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    if header_len > 1 << 24 {
        return Err(CheckpointError::Header(format!(
            "implausible header length {header_len}"
        )));
    }
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| CheckpointError::Header(e.to_string()))?;

    header
        .config
        .validate()
        .map_err(|e| CheckpointError::Mismatch(format!("stored config invalid: {e}")))?;
    let expected = ParamLayout::new(&header.config);
    if header.tensors != expected.tensors() {
        return Err(CheckpointError::Mismatch(
            "tensor table does not match the stored config's layout".into(),
        ));
    }

    let total = expected.total();
    let mut payload = vec![0u8; total * 4];
    r.read_exact(&mut payload)
        .map_err(|_| CheckpointError::Mismatch(format!("payload shorter than {total} values")))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(CheckpointError::Mismatch("trailing bytes after payload".into()));
    }

    let mut params = Vec::with_capacity(total);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
        if !v.is_finite() {
            return Err(CheckpointError::Mismatch(format!(
                "non-finite parameter at flat index {i}"
            )));
        }
        params.push(v as f64);
    }
    TinyLm::from_params(header.config, params)
        .map_err(|e| CheckpointError::Mismatch(e.to_string()))
}
