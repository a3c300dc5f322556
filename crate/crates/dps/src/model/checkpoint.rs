//! Checkpoint IO.
//!
//! Layout: magic `"DPSM"`, format version (u32 LE), header length
//! (u32 LE), UTF-8 JSON header (config + ordered tensor manifest), then
//! raw row-major little-endian f32 data in manifest order. No compression.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DpsError, Result};

use super::config::ModelConfig;
use super::params::{manifest, Params};
use super::ModelCheckpoint;

const MAGIC: [u8; 4] = *b"DPSM";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

pub fn to_bytes(ckpt: &ModelCheckpoint) -> Result<Vec<u8>> {
    let header = Header {
        config: ckpt.config.clone(),
        tensors: manifest(&ckpt.config)
            .into_iter()
            .map(|(name, shape)| TensorEntry { name, shape })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for tensor in ckpt.params.flatten() {
        for &v in tensor {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelCheckpoint> {
    if bytes.len() < 12 {
        return Err(DpsError::Truncated("shorter than fixed header".into()));
    }
    let found: [u8; 4] = bytes[0..4].try_into().unwrap();
    if found != MAGIC {
        return Err(DpsError::MagicMismatch { found });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(DpsError::VersionMismatch(version));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(DpsError::Truncated("header extends past end of file".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])?;
    header.config.validate()?;

    let expected = manifest(&header.config);
    if header.tensors.len() != expected.len() {
        return Err(DpsError::Config(format!(
            "manifest lists {} tensors, config requires {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    for (entry, (name, shape)) in header.tensors.iter().zip(&expected) {
        if &entry.name != name || &entry.shape != shape {
            return Err(DpsError::ShapeMismatch {
                name: entry.name.clone(),
                header: entry.shape.clone(),
                expected: shape.clone(),
            });
        }
    }

    let mut params = Params::zeros_like(&header.config);
    let mut offset = 12 + header_len;
    for (tensor, (name, _)) in params.flatten_mut().into_iter().zip(&expected) {
        let nbytes = tensor.len() * 4;
        if bytes.len() < offset + nbytes {
            return Err(DpsError::Truncated(format!("tensor {name} is incomplete")));
        }
        for (i, chunk) in bytes[offset..offset + nbytes].chunks_exact(4).enumerate() {
            tensor[i] = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        offset += nbytes;
    }
    if offset != bytes.len() {
        return Err(DpsError::Truncated(format!(
            "{} trailing bytes after tensor data",
            bytes.len() - offset
        )));
    }
    Ok(ModelCheckpoint {
        config: header.config,
        params,
    })
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    from_bytes(&fs::read(path)?)
}

/// Content hash of a checkpoint (SHA-256 of its serialized bytes).
pub fn fingerprint(ckpt: &ModelCheckpoint) -> String {
    let bytes = to_bytes(ckpt).expect("checkpoint serialization cannot fail");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt() -> ModelCheckpoint {
        ModelCheckpoint::init(ModelConfig {
            num_layers: 2,
            num_heads: 2,
            d_model: 8,
            d_head: 4,
            d_ff: 12,
            vocab_size: 17,
            max_seq_len: 9,
            seed: 5,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = ckpt();
        let bytes = to_bytes(&c).unwrap();
        let loaded = from_bytes(&bytes).unwrap();
        assert_eq!(c, loaded);
        assert_eq!(bytes, to_bytes(&loaded).unwrap());
    }

    #[test]
    fn corrupt_magic_is_detected() {
        let mut bytes = to_bytes(&ckpt()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            from_bytes(&bytes),
            Err(DpsError::MagicMismatch { .. })
        ));
    }

    #[test]
    fn bad_version_is_detected() {
        let mut bytes = to_bytes(&ckpt()).unwrap();
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(from_bytes(&bytes), Err(DpsError::VersionMismatch(99))));
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = to_bytes(&ckpt()).unwrap();
        let cut = &bytes[..bytes.len() - 5];
        assert!(matches!(from_bytes(cut), Err(DpsError::Truncated(_))));
    }

    #[test]
    fn shape_mismatch_names_the_tensor() {
        let c = ckpt();
        let mut bytes = to_bytes(&c).unwrap();
        // rewrite the header with a wrong shape for tok_emb
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let mut header: Header = serde_json::from_slice(&bytes[12..12 + header_len]).unwrap();
        header.tensors[0].shape = vec![1, 1];
        let new_json = serde_json::to_vec(&header).unwrap();
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(new_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&new_json);
        out.extend_from_slice(&bytes.split_off(12 + header_len));
        match from_bytes(&out) {
            Err(DpsError::ShapeMismatch { name, .. }) => assert_eq!(name, "tok_emb"),
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = ckpt();
        let mut b = ckpt();
        assert_eq!(fingerprint(&a), fingerprint(&b));
        b.params.tok_emb[0] += 1.0;
        assert_ne!(fingerprint(&a), fingerprint(&b));
    }
}
