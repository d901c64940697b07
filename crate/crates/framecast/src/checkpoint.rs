//! Checkpoint file format.
//!
//! One file: an 8-byte little-endian header length, a JSON header (embedded
//! caller config plus a parameter manifest with names, shapes, and
//! trainability), then the parameter payload framed with an 8-byte length
//! and CRC32 — little-endian 64-bit float blocks in manifest order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint header: {0}")]
    MalformedHeader(String),
    #[error("unsupported checkpoint format version {0}")]
    BadVersion(u32),
    #[error("parameter payload truncated: declared {declared} bytes, found {found}")]
    Truncated { declared: u64, found: u64 },
    #[error("parameter payload checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("manifest entry `{name}` declares {declared} values but payload holds {available}")]
    ManifestOverrun {
        name: String,
        declared: usize,
        available: usize,
    },
}

pub type CheckpointResult<V> = Result<V, CheckpointError>;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: serde_json::Value,
    manifest: Vec<ManifestEntry>,
}

fn io_err(path: &Path, source: std::io::Error) -> CheckpointError {
    CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes a checkpoint: `config` is arbitrary caller JSON (model
/// architecture, normalization constant, seed); parameters are stored as
/// f64 in manifest order.
pub fn write_checkpoint<T: Scalar>(
    path: &Path,
    config: &serde_json::Value,
    params: &ParamSet<T>,
) -> CheckpointResult<()> {
    let manifest: Vec<ManifestEntry> = params
        .iter()
        .map(|(name, entry)| ManifestEntry {
            name: name.to_string(),
            shape: entry.tensor.shape().to_vec(),
            trainable: entry.trainable,
        })
        .collect();
    let header = Header {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: config.clone(),
        manifest,
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| CheckpointError::MalformedHeader(e.to_string()))?;

    let mut payload = Vec::new();
    for (_, entry) in params.iter() {
        for v in entry.tensor.data() {
            payload.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&payload);
    let crc = hasher.finalize();

    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&(header_bytes.len() as u64).to_le_bytes())
        .and_then(|_| file.write_all(&header_bytes))
        .and_then(|_| file.write_all(&(payload.len() as u64).to_le_bytes()))
        .and_then(|_| file.write_all(&crc.to_le_bytes()))
        .and_then(|_| file.write_all(&payload))
        .map_err(|e| io_err(path, e))
}

/// Reads a checkpoint back: the embedded config JSON and the parameters.
pub fn read_checkpoint<T: Scalar>(
    path: &Path,
) -> CheckpointResult<(serde_json::Value, ParamSet<T>)> {
    let mut file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut len_buf = [0u8; 8];
    file.read_exact(&mut len_buf)
        .map_err(|_| CheckpointError::MalformedHeader("missing header length".into()))?;
    let header_len = u64::from_le_bytes(len_buf) as usize;
    if header_len > 256 * 1024 * 1024 {
        return Err(CheckpointError::MalformedHeader(format!(
            "implausible header length {header_len}"
        )));
    }
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)
        .map_err(|_| CheckpointError::MalformedHeader("header shorter than declared".into()))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| CheckpointError::MalformedHeader(e.to_string()))?;
    if header.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(CheckpointError::BadVersion(header.format_version));
    }

    let mut frame = [0u8; 12];
    file.read_exact(&mut frame)
        .map_err(|_| CheckpointError::MalformedHeader("missing payload frame".into()))?;
    let declared = u64::from_le_bytes(frame[..8].try_into().expect("fixed frame size"));
    let stored = u32::from_le_bytes(frame[8..].try_into().expect("fixed frame size"));
    let mut payload = Vec::new();
    file.read_to_end(&mut payload).map_err(|e| io_err(path, e))?;
    if payload.len() as u64 != declared {
        return Err(CheckpointError::Truncated {
            declared,
            found: payload.len() as u64,
        });
    }
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&payload);
    let computed = hasher.finalize();
    if computed != stored {
        return Err(CheckpointError::ChecksumMismatch { stored, computed });
    }

    let mut params = ParamSet::new();
    let mut offset = 0usize;
    let total = payload.len() / 8;
    for entry in &header.manifest {
        let count: usize = entry.shape.iter().product();
        if offset + count > total {
            return Err(CheckpointError::ManifestOverrun {
                name: entry.name.clone(),
                declared: count,
                available: total - offset,
            });
        }
        let values: Vec<f64> = payload[offset * 8..(offset + count) * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunked by 8")))
            .collect();
        let tensor = Tensor::<T>::from_f64_slice(entry.shape.clone(), &values)
            .map_err(|e| CheckpointError::MalformedHeader(e.to_string()))?;
        params.insert(&entry.name, tensor, entry.trainable);
        offset += count;
    }
    if offset != total {
        return Err(CheckpointError::ManifestOverrun {
            name: "<end of manifest>".to_string(),
            declared: 0,
            available: total - offset,
        });
    }
    Ok((header.config, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::uniform_tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_params() -> ParamSet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::new();
        ps.insert("a.w", uniform_tensor(&mut rng, &[3, 4], 1.0), true);
        ps.insert("a.b", uniform_tensor(&mut rng, &[4], 1.0), true);
        ps.insert("bn.running_mean", uniform_tensor(&mut rng, &[4], 1.0), false);
        ps
    }

    #[test]
    fn round_trip_is_bit_identical_with_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let params = sample_params();
        let config = serde_json::json!({"dim": 2, "s_max": 1.5, "seed": 7});
        write_checkpoint(&path, &config, &params).unwrap();
        let (config_back, params_back) = read_checkpoint::<f64>(&path).unwrap();
        assert_eq!(config, config_back);
        assert_eq!(params.len(), params_back.len());
        for ((n1, e1), (n2, e2)) in params.iter().zip(params_back.iter()) {
            assert_eq!(n1, n2, "manifest order preserved");
            assert_eq!(e1.trainable, e2.trainable);
            assert_eq!(e1.tensor, e2.tensor, "f64 payload is bit-exact");
        }
    }

    #[test]
    fn corrupted_checkpoints_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        write_checkpoint(&path, &serde_json::json!({}), &sample_params()).unwrap();
        let bytes = fs::read(&path).unwrap();

        // Truncation.
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            read_checkpoint::<f64>(&path),
            Err(CheckpointError::Truncated { .. })
        ));

        // Payload bit flip.
        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 0x01;
        fs::write(&path, &flipped).unwrap();
        assert!(matches!(
            read_checkpoint::<f64>(&path),
            Err(CheckpointError::ChecksumMismatch { .. })
        ));

        // Garbage header.
        fs::write(&path, b"short").unwrap();
        assert!(matches!(
            read_checkpoint::<f64>(&path),
            Err(CheckpointError::MalformedHeader(_))
        ));
    }
}
