//! Parameter checkpoint files: one JSON header line followed by a raw
//! little-endian 64-bit float payload. Round trips are bit-exact.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad checkpoint header: {0}")]
    Header(String),
    #[error("payload holds {got} values, header declares {expected}")]
    PayloadSize { expected: usize, got: usize },
}

#[derive(Serialize, Deserialize)]
struct Envelope<H> {
    format: String,
    count: usize,
    meta: H,
}

const FORMAT: &str = "smalltrack-params-v1";

/// Writes `meta` (architecture, widths, seed, ...) as the JSON header line
/// and the flat value list as little-endian f64 bytes.
pub fn save_checkpoint<H: Serialize>(
    path: &Path,
    meta: &H,
    values: &[f64],
) -> Result<(), CheckpointError> {
    let envelope = Envelope {
        format: FORMAT.to_string(),
        count: values.len(),
        meta,
    };
    let mut bytes = serde_json::to_vec(&envelope)
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    bytes.push(b'\n');
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Reads a checkpoint back: the typed header metadata plus the value list.
pub fn load_checkpoint<H: DeserializeOwned>(
    path: &Path,
) -> Result<(H, Vec<f64>), CheckpointError> {
    let bytes = fs::read(path).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let newline = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| CheckpointError::Header("missing header line".to_string()))?;
    let envelope: Envelope<H> = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    if envelope.format != FORMAT {
        return Err(CheckpointError::Header(format!(
            "unknown format {:?}",
            envelope.format
        )));
    }
    let payload = &bytes[newline + 1..];
    if payload.len() % 8 != 0 || payload.len() / 8 != envelope.count {
        return Err(CheckpointError::PayloadSize {
            expected: envelope.count,
            got: payload.len() / 8,
        });
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((envelope.meta, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Meta {
        widths: Vec<usize>,
        seed: u64,
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let tmp = tempdir().unwrap();
        let path = tmp.path().join("p.ckpt");
        let meta = Meta {
            widths: vec![3, 32, 32],
            seed: 42,
        };
        let values = vec![0.1, -2.5e300, 3.14159, f64::MIN_POSITIVE, 0.0, -0.0];
        save_checkpoint(&path, &meta, &values).unwrap();
        let (meta2, values2): (Meta, Vec<f64>) = load_checkpoint(&path).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(values.len(), values2.len());
        for (a, b) in values.iter().zip(&values2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let tmp = tempdir().unwrap();
        let path = tmp.path().join("p.ckpt");
        save_checkpoint(&path, &Meta { widths: vec![], seed: 0 }, &[1.0, 2.0]).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            load_checkpoint::<Meta>(&path),
            Err(CheckpointError::PayloadSize { .. })
        ));
    }
}
