//! Binary checkpoint format.
//!
//! ```text
//! magic        8 bytes   "RSCKPT\0\0"
//! version      u32 LE
//! header_len   u64 LE
//! header       header_len bytes of JSON: architecture, config, vocabulary,
//!              tensor names and shapes, training metadata
//! tensors      f32 LE values of every tensor, in header order
//! checksum     SHA-256 of all preceding bytes
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ArchitectureConfig, ArchitectureKind, Classifier, SentimentModel, TrainingMeta};
use crate::error::{Error, Result};
use crate::text::Vocabulary;

const MAGIC: &[u8; 8] = b"RSCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    model: ArchitectureConfig,
    vocabulary: Vec<String>,
    tensors: Vec<TensorEntry>,
    metadata: TrainingMeta,
}

/// Serializes a model to bytes. Equal models give equal bytes.
pub fn encode_checkpoint(model: &SentimentModel) -> Vec<u8> {
    let params = model.classifier.params();
    let header = Header {
        model: model.classifier.config(),
        vocabulary: model.vocab.tokens().to_vec(),
        tensors: params
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
        metadata: model.meta.clone(),
    };
    let header = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let mut buf = Vec::with_capacity(20 + header.len() + 4 * params.num_values() + CHECKSUM_LEN);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for p in params.iter() {
        for x in p.value.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

pub fn save_checkpoint(model: &SentimentModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

pub fn decode_checkpoint(bytes: &[u8], expect: Option<ArchitectureKind>) -> Result<SentimentModel> {
    if bytes.len() < MAGIC.len() + 12 + CHECKSUM_LEN || &bytes[..8] != MAGIC {
        return Err(corrupt("missing or truncated preamble"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(corrupt("checksum mismatch (truncated or modified file)"));
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| corrupt("header length exceeds file"))?;
    let header: Header =
        serde_json::from_slice(&body[20..header_end]).map_err(|e| corrupt(format!("bad header: {e}")))?;

    let found = header.model.kind();
    if let Some(expected) = expect.filter(|&k| k != found) {
        return Err(Error::ArchitectureMismatch {
            expected: expected.id().into(),
            found: found.id().into(),
        });
    }
    let vocab = Vocabulary::from_tokens(header.vocabulary)?;
    if vocab.len() != header.model.vocab_size() {
        return Err(Error::TensorShape {
            name: "embedding".into(),
            reason: format!("vocabulary has {} entries, config says {}", vocab.len(), header.model.vocab_size()),
        });
    }

    let mut classifier = Classifier::<f32>::zeroed(header.model)?;
    let params = classifier.params_mut();
    if header.tensors.len() != params.len() {
        return Err(Error::TensorShape {
            name: "*".into(),
            reason: format!("expected {} tensors, header lists {}", params.len(), header.tensors.len()),
        });
    }
    let mut data = &body[header_end..];
    for (entry, p) in header.tensors.iter().zip(params.iter_mut()) {
        if entry.name != p.name || entry.shape != p.value.shape() {
            return Err(Error::TensorShape {
                name: entry.name.clone(),
                reason: format!("expected `{}` with shape {:?}, found shape {:?}", p.name, p.value.shape(), entry.shape),
            });
        }
        let n = p.value.numel() * 4;
        if data.len() < n {
            return Err(corrupt(format!("tensor `{}` is truncated", entry.name)));
        }
        for (x, chunk) in p.value.data_mut().iter_mut().zip(data[..n].chunks_exact(4)) {
            *x = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
        if !p.value.is_finite() {
            return Err(corrupt(format!("tensor `{}` holds non-finite values", entry.name)));
        }
        data = &data[n..];
    }
    if !data.is_empty() {
        return Err(corrupt(format!("{} unexpected trailing bytes", data.len())));
    }
    Ok(SentimentModel {
        classifier,
        vocab,
        meta: header.metadata,
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SentimentModel> {
    decode_checkpoint(&read(path.as_ref())?, None)
}

/// Loads a checkpoint, failing if it holds a different architecture.
pub fn load_checkpoint_as(path: impl AsRef<Path>, kind: ArchitectureKind) -> Result<SentimentModel> {
    decode_checkpoint(&read(path.as_ref())?, Some(kind))
}
