//! Checkpoint container: "LATCKPT1" magic, a JSON manifest (hyperparameters
//! plus name -> shape/offset entries), then a flat little-endian f32 blob.
//! The blob stays f32 regardless of the engine's `Real` width.

use super::{Real, Tensor};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LATCKPT1";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: String,
    hyper: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    /// Byte offset into the blob.
    offset: u64,
    /// Element count (rows * cols).
    len: usize,
}

/// Writes hyperparameters and named tensors to `path`.
pub fn save_checkpoint<H: Serialize>(
    path: &Path,
    hyper: &H,
    tensors: &[(String, &Tensor)],
) -> Result<()> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut blob: Vec<u8> = Vec::new();
    for (name, t) in tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            rows: t.rows,
            cols: t.cols,
            offset: blob.len() as u64,
            len: t.len(),
        });
        for &v in &t.data {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        version: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
        hyper: serde_json::to_value(hyper).map_err(|e| Error::Format(e.to_string()))?,
        tensors: entries,
    };
    let manifest_bytes =
        serde_json::to_vec(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(CHECKPOINT_MAGIC)?;
    file.write_all(&(manifest_bytes.len() as u32).to_le_bytes())?;
    file.write_all(&manifest_bytes)?;
    file.write_all(&blob)?;
    file.flush()?;
    Ok(())
}

/// Reads a checkpoint back as (hyperparameters, named tensors) in file order.
pub fn load_checkpoint(path: &Path) -> Result<(serde_json::Value, Vec<(String, Tensor)>)> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {:?} (expected {:?})",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(CHECKPOINT_MAGIC)
        )));
    }
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes)?;
    let manifest_len = u32::from_le_bytes(len_bytes) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    file.read_exact(&mut manifest_bytes)?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| Error::Format(format!("bad checkpoint manifest: {e}")))?;
    let mut blob = Vec::new();
    file.read_to_end(&mut blob)?;

    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        if entry.len != entry.rows * entry.cols {
            return Err(Error::Format(format!(
                "tensor '{}': len {} != {}x{}",
                entry.name, entry.len, entry.rows, entry.cols
            )));
        }
        let start = entry.offset as usize;
        let end = start + entry.len * 4;
        if end > blob.len() {
            return Err(Error::Format(format!(
                "tensor '{}' extends past end of blob",
                entry.name
            )));
        }
        let data: Vec<Real> = blob[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as Real)
            .collect();
        tensors.push((entry.name.clone(), Tensor::from_vec(entry.rows, entry.cols, data)));
    }
    Ok((manifest.hyper, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_tensors_and_hyper() {
        let dir = std::env::temp_dir().join(format!("latckpt-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rt.ckpt");
        let a = Tensor::from_vec(2, 3, vec![1.0, -2.5, 3.25, 0.0, 7.0, -0.125]);
        let b = Tensor::scalar(42.0);
        let hyper = serde_json::json!({"d_model": 8, "n_layers": 2});
        save_checkpoint(&path, &hyper, &[("a".into(), &a), ("b".into(), &b)]).unwrap();
        let (h, tensors) = load_checkpoint(&path).unwrap();
        assert_eq!(h, hyper);
        assert_eq!(tensors.len(), 2);
        assert_eq!(tensors[0].0, "a");
        assert_eq!(tensors[0].1, a);
        assert_eq!(tensors[1].1, b);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = std::env::temp_dir().join(format!("latckpt-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ckpt");
        std::fs::write(&path, b"NOTACKPT____").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
        std::fs::remove_dir_all(&dir).ok();
    }
}
