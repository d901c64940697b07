//! On-disk dataset format.
//!
//! A dataset is a directory holding `meta.json` plus framed binary payloads:
//! `trajectories.bin` (f64), `edges.bin` (u8), and optionally `charges.bin`
//! (f64). Every payload is little-endian, row-major, and prefixed with an
//! 8-byte length and a CRC32 of the payload bytes, so truncation and
//! corruption are detected before any data is interpreted.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{DatasetBundle, DatasetMeta};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed metadata: {0}")]
    MalformedMeta(#[from] serde_json::Error),
    #[error("{path}: framed payload truncated (declared {declared} bytes, found {found})")]
    Truncated {
        path: String,
        declared: u64,
        found: u64,
    },
    #[error("{path}: checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch {
        path: String,
        stored: u32,
        computed: u32,
    },
    #[error("{path}: payload holds {got} elements, metadata implies {expected}")]
    LengthMismatch {
        path: String,
        got: usize,
        expected: usize,
    },
}

pub type StoreResult<V> = Result<V, StoreError>;

const META_FILE: &str = "meta.json";
const TRAJ_FILE: &str = "trajectories.bin";
const EDGE_FILE: &str = "edges.bin";
const CHARGE_FILE: &str = "charges.bin";

fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_framed(path: &Path, payload: &[u8]) -> StoreResult<()> {
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(payload);
    let crc = hasher.finalize();
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&(payload.len() as u64).to_le_bytes())
        .and_then(|_| file.write_all(&crc.to_le_bytes()))
        .and_then(|_| file.write_all(payload))
        .map_err(|e| io_err(path, e))
}

fn read_framed(path: &Path) -> StoreResult<Vec<u8>> {
    let mut file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut header = [0u8; 12];
    file.read_exact(&mut header).map_err(|e| io_err(path, e))?;
    let declared = u64::from_le_bytes(header[..8].try_into().expect("fixed header size"));
    let stored = u32::from_le_bytes(header[8..].try_into().expect("fixed header size"));
    let mut payload = Vec::new();
    file.read_to_end(&mut payload).map_err(|e| io_err(path, e))?;
    if payload.len() as u64 != declared {
        return Err(StoreError::Truncated {
            path: path.display().to_string(),
            declared,
            found: payload.len() as u64,
        });
    }
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&payload);
    let computed = hasher.finalize();
    if computed != stored {
        return Err(StoreError::ChecksumMismatch {
            path: path.display().to_string(),
            stored,
            computed,
        });
    }
    Ok(payload)
}

fn f64_to_bytes(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn bytes_to_f64(bytes: &[u8], path: &Path, expected: usize) -> StoreResult<Vec<f64>> {
    if bytes.len() % 8 != 0 || bytes.len() / 8 != expected {
        return Err(StoreError::LengthMismatch {
            path: path.display().to_string(),
            got: bytes.len() / 8,
            expected,
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunked by 8")))
        .collect())
}

/// Writes a dataset bundle into `dir` (created if missing). Floats are
/// stored as little-endian f64, so `f64` bundles round-trip bit-exactly.
pub fn write_dataset<T: Scalar>(bundle: &DatasetBundle<T>, dir: &Path) -> StoreResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let meta_path = dir.join(META_FILE);
    let meta_json = serde_json::to_string_pretty(&bundle.meta)?;
    fs::write(&meta_path, meta_json).map_err(|e| io_err(&meta_path, e))?;

    let traj: Vec<f64> = bundle.trajectories.iter().map(|v| v.as_f64()).collect();
    write_framed(&dir.join(TRAJ_FILE), &f64_to_bytes(&traj))?;
    write_framed(&dir.join(EDGE_FILE), &bundle.edge_labels)?;
    if let Some(charges) = &bundle.charges {
        let q: Vec<f64> = charges.iter().map(|v| v.as_f64()).collect();
        write_framed(&dir.join(CHARGE_FILE), &f64_to_bytes(&q))?;
    }
    Ok(())
}

/// Reads only the metadata, without touching the binary payloads.
pub fn read_dataset_meta(dir: &Path) -> StoreResult<DatasetMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads a dataset bundle, validating framing, checksums, and sizes against
/// the metadata.
pub fn read_dataset<T: Scalar>(dir: &Path) -> StoreResult<DatasetBundle<T>> {
    let meta = read_dataset_meta(dir)?;
    let traj_expected = meta.n_scenes * meta.t_len * meta.n_nodes * 2 * meta.dim;
    let traj_path = dir.join(TRAJ_FILE);
    let traj_bytes = read_framed(&traj_path)?;
    let traj = bytes_to_f64(&traj_bytes, &traj_path, traj_expected)?;

    let edge_expected = meta.n_scenes * meta.t_len * meta.n_nodes * meta.n_nodes;
    let edge_path = dir.join(EDGE_FILE);
    let edge_labels = read_framed(&edge_path)?;
    if edge_labels.len() != edge_expected {
        return Err(StoreError::LengthMismatch {
            path: edge_path.display().to_string(),
            got: edge_labels.len(),
            expected: edge_expected,
        });
    }

    let charge_path = dir.join(CHARGE_FILE);
    let charges = if charge_path.exists() {
        let bytes = read_framed(&charge_path)?;
        Some(
            bytes_to_f64(&bytes, &charge_path, meta.n_scenes * meta.n_nodes)?
                .into_iter()
                .map(T::lit)
                .collect(),
        )
    } else {
        None
    };

    Ok(DatasetBundle {
        meta,
        trajectories: traj.into_iter().map(T::lit).collect(),
        edge_labels,
        charges,
    })
}
