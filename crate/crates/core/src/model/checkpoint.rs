//! Single-file checkpoint: one JSON header line, then raw little-endian
//! `f32` tensor data in header order. Tensor offsets are byte offsets into
//! the data section that follows the header's newline.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Arch, Hyperparams, ModelParams, Weights};
use crate::dataset::{ComponentStats, PitchVocabulary};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct HyperRecord {
    #[serde(flatten)]
    hyper: Hyperparams,
    vocab_low: u8,
    vocab_size: usize,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    hyper: HyperRecord,
    stats: ComponentStats,
    tensors: Vec<TensorRecord>,
}

pub fn checkpoint_to_bytes(params: &ModelParams) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, t) in params.weights.tensors() {
        tensors.push(TensorRecord {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len() * 4;
    }
    let header = Header {
        version: CHECKPOINT_VERSION,
        hyper: HyperRecord {
            hyper: params.hyper,
            vocab_low: params.vocab.midi_low,
            vocab_size: params.vocab.size,
        },
        stats: params.stats,
        tensors,
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.reserve(offset);
    for (_, t) in params.weights.tensors() {
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing header line".into()))?;
    let header_value: serde_json::Value = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::Checkpoint(format!("header is not JSON: {e}")))?;
    match header_value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == CHECKPOINT_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::Checkpoint(format!(
                "version mismatch: file has {v}, expected {CHECKPOINT_VERSION}"
            )))
        }
        None => return Err(Error::Checkpoint("header has no version".into())),
    }
    let header: Header = serde_json::from_value(header_value)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let blob = &bytes[newline + 1..];

    for t in &header.tensors {
        let need = t.shape.iter().product::<usize>() * 4;
        let end = t.offset.saturating_add(need);
        if end > blob.len() {
            return Err(Error::Checkpoint(format!(
                "truncated tensor {}: needs bytes {}..{}, data has {}",
                t.name,
                t.offset,
                end,
                blob.len()
            )));
        }
    }

    let hyper = header.hyper.hyper;
    hyper
        .validate_shapes()
        .map_err(|e| Error::Checkpoint(format!("bad hyperparameters: {e}")))?;
    let vocab = PitchVocabulary::new(header.hyper.vocab_low, header.hyper.vocab_size)
        .map_err(|e| Error::Checkpoint(format!("bad vocabulary: {e}")))?;
    let mut weights = Weights::<f32>::zeros(&Arch::new(&hyper, vocab.size));
    let expected = weights.tensors_mut();
    if expected.len() != header.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, header lists {}",
            expected.len(),
            header.tensors.len()
        )));
    }
    for ((name, mut dst), rec) in expected.into_iter().zip(&header.tensors) {
        if rec.name != name {
            return Err(Error::Checkpoint(format!(
                "expected tensor {name}, found {}",
                rec.name
            )));
        }
        if rec.shape != dst.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {:?}, model needs {:?}",
                rec.shape,
                dst.shape()
            )));
        }
        let data = &blob[rec.offset..rec.offset + dst.len() * 4];
        for (v, chunk) in dst.iter_mut().zip(data.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        }
    }
    if !weights.is_finite() {
        return Err(Error::Checkpoint("non-finite weights".into()));
    }
    Ok(ModelParams {
        hyper,
        vocab,
        stats: header.stats,
        weights,
    })
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro() -> ModelParams {
        let h = Hyperparams {
            embed_dim: 3,
            enc_hidden: 4,
            latent_dim: 2,
            conductor_hidden: 3,
            dec_hidden: 4,
            segments: 2,
            segment_len: 2,
            seed: 17,
            ..Default::default()
        };
        let stats = ComponentStats {
            mean: [0.1, -0.2, 0.3],
            std: [2.0, 1.5, 1.25],
        };
        ModelParams::init(h, PitchVocabulary::new(60, 5).unwrap(), stats).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let p = micro();
        let back = checkpoint_from_bytes(&checkpoint_to_bytes(&p)).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn declared_shape_larger_than_blob() {
        let p = micro();
        let bytes = checkpoint_to_bytes(&p);
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let mut header: serde_json::Value = serde_json::from_slice(&bytes[..nl]).unwrap();
        header["tensors"] = serde_json::json!([{"name": "embed", "shape": [2, 3], "offset": 0}]);
        let mut crafted = serde_json::to_vec(&header).unwrap();
        crafted.push(b'\n');
        crafted.extend_from_slice(&[0u8; 20]);
        let err = checkpoint_from_bytes(&crafted).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn cut_file_is_truncation() {
        let bytes = checkpoint_to_bytes(&micro());
        let err = checkpoint_from_bytes(&bytes[..bytes.len() - 3])
            .unwrap_err()
            .to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn wrong_version_rejected() {
        let bytes = checkpoint_to_bytes(&micro());
        let text = String::from_utf8_lossy(&bytes).replacen("\"version\":1", "\"version\":2", 1);
        let err = checkpoint_from_bytes(text.as_bytes())
            .unwrap_err()
            .to_string();
        assert!(err.contains("version mismatch"), "{err}");
    }

    #[test]
    fn shape_inconsistency_rejected() {
        let p = micro();
        let bytes = checkpoint_to_bytes(&p);
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let mut header: serde_json::Value = serde_json::from_slice(&bytes[..nl]).unwrap();
        header["tensors"][0]["shape"] = serde_json::json!([3, 5]);
        let mut crafted = serde_json::to_vec(&header).unwrap();
        crafted.extend_from_slice(&bytes[nl..]);
        let err = checkpoint_from_bytes(&crafted).unwrap_err().to_string();
        assert!(err.contains("shape"), "{err}");
    }
}
