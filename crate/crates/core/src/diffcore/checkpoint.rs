//! Versioned binary parameter checkpoints.
//!
//! Layout: magic, config digest, then per tensor (in registration order) the
//! name, shape, and little-endian f32 data. Loading rejects digest, name,
//! and shape mismatches.

use std::fs;
use std::path::Path;

use super::params::ParamStore;
use super::DiffError;

const MAGIC: &[u8; 8] = b"GTCKPT01";

fn io_err(e: std::io::Error) -> DiffError {
    DiffError::Io(e.to_string())
}

pub fn save_checkpoint(
    store: &ParamStore,
    path: &Path,
    config_digest: &str,
) -> Result<(), DiffError> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MAGIC);
    let digest = config_digest.as_bytes();
    out.extend_from_slice(&(digest.len() as u16).to_le_bytes());
    out.extend_from_slice(digest);
    let names: Vec<&str> = store.names().collect();
    out.extend_from_slice(&(names.len() as u32).to_le_bytes());
    for name in names {
        let id = store.id(name)?;
        let bytes = name.as_bytes();
        out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(bytes);
        let shape = store.shape(id);
        out.push(shape.len() as u8);
        for d in shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in store.value(id) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    fs::write(path, out).map_err(io_err)
}

/// Reads only the config digest recorded in a checkpoint file.
pub fn checkpoint_digest(path: &Path) -> Result<String, DiffError> {
    let bytes = fs::read(path).map_err(io_err)?;
    if bytes.len() < 10 || &bytes[0..8] != MAGIC {
        return Err(DiffError::CheckpointMismatch(
            "bad magic or version".to_string(),
        ));
    }
    let len = u16::from_le_bytes(bytes[8..10].try_into().unwrap()) as usize;
    if bytes.len() < 10 + len {
        return Err(DiffError::CheckpointMismatch("truncated file".to_string()));
    }
    Ok(String::from_utf8_lossy(&bytes[10..10 + len]).to_string())
}

/// Loads values into an already-registered store. The file must carry the
/// expected config digest and exactly the store's tensors.
pub fn load_checkpoint(
    store: &mut ParamStore,
    path: &Path,
    expected_digest: &str,
) -> Result<(), DiffError> {
    let bytes = fs::read(path).map_err(io_err)?;
    let reject = |m: String| DiffError::CheckpointMismatch(m);
    let mut at = 0usize;
    let mut take = |n: usize| -> Result<&[u8], DiffError> {
        if at + n > bytes.len() {
            return Err(DiffError::CheckpointMismatch("truncated file".to_string()));
        }
        let s = &bytes[at..at + n];
        at += n;
        Ok(s)
    };
    if take(8)? != MAGIC {
        return Err(reject("bad magic or version".to_string()));
    }
    let digest_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
    let digest = String::from_utf8_lossy(take(digest_len)?).to_string();
    if digest != expected_digest {
        return Err(reject(format!(
            "config digest '{digest}' != expected '{expected_digest}'"
        )));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    if count != store.len() {
        return Err(reject(format!(
            "{count} tensors in file, store has {}",
            store.len()
        )));
    }
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8_lossy(take(name_len)?).to_string();
        let id = store
            .id(&name)
            .map_err(|_| reject(format!("unknown tensor '{name}'")))?;
        let ndim = take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
        }
        if shape != store.shape(id) {
            return Err(reject(format!(
                "tensor '{name}' shape {shape:?} != {:?}",
                store.shape(id)
            )));
        }
        let len: usize = shape.iter().product();
        let data = take(len * 4)?;
        let values: Vec<f64> = data
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        store.value_mut(id).copy_from_slice(&values);
    }
    Ok(())
}
