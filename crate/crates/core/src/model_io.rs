//! `LEXCRF01` model files.
//!
//! Layout: the 8 magic bytes, a little-endian `u32` manifest length, the JSON
//! manifest, the little-endian `f64` payload (parameters, then the Adam first
//! and second moments) and a SHA-256 digest of everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{LabelInventory, Vocab};
use crate::error::{Error, Result};
use crate::model::{Model, Variant};
use crate::scorer::{Params, ScorerDims, Tensor};
use crate::train::{AdamState, Checkpoint};

pub const MAGIC: &[u8; 8] = b"LEXCRF01";
const MAGIC_FAMILY: &[u8; 6] = b"LEXCRF";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    variant: Variant,
    dims: ScorerDims,
    vocab: Vec<String>,
    labels: Vec<String>,
    tensors: Vec<TensorEntry>,
    params_len: usize,
    /// Raw bits of the dev F1 so the value survives any text encoding.
    dev_f1_bits: u64,
    epoch: usize,
    adam_t: u64,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let params = &ck.model.scorer.params;
    let dims = params.dims().clone();
    let mut tensors = Vec::with_capacity(Tensor::ALL.len());
    let mut offset = 0;
    for &t in Tensor::ALL.iter() {
        let shape = dims.shape(t);
        let len: usize = shape.iter().product();
        tensors.push(TensorEntry {
            name: t.name().to_string(),
            shape,
            offset,
        });
        offset += len;
    }
    if ck.adam.m.len() != params.len() || ck.adam.v.len() != params.len() {
        return Err(Error::Shape(
            "optimizer state does not match the parameters".into(),
        ));
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        variant: ck.model.variant.clone(),
        dims,
        vocab: ck.model.vocab.tokens().to_vec(),
        labels: ck.model.labels.names().to_vec(),
        tensors,
        params_len: params.len(),
        dev_f1_bits: ck.dev_f1.to_bits(),
        epoch: ck.epoch,
        adam_t: ck.adam.t,
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::Internal(e.to_string()))?;
    let manifest_len =
        u32::try_from(json.len()).map_err(|_| Error::Internal("manifest too large".into()))?;
    let mut out = Vec::with_capacity(12 + json.len() + 24 * params.len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&manifest_len.to_le_bytes());
    out.extend_from_slice(&json);
    for block in [params.data(), &ck.adam.m[..], &ck.adam.v[..]] {
        for x in block {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() {
        return Err(Error::Integrity("file is too short to be a model".into()));
    }
    if &bytes[..8] != MAGIC {
        if &bytes[..6] == MAGIC_FAMILY {
            return Err(Error::Version(format!(
                "model format {} is not supported (expected {})",
                String::from_utf8_lossy(&bytes[..8]),
                String::from_utf8_lossy(MAGIC)
            )));
        }
        return Err(Error::Integrity("missing LEXCRF01 magic bytes".into()));
    }
    if bytes.len() < 12 + DIGEST_LEN {
        return Err(Error::Integrity("model file is truncated".into()));
    }
    let body = &bytes[..bytes.len() - DIGEST_LEN];
    if Sha256::digest(body).as_slice() != &bytes[bytes.len() - DIGEST_LEN..] {
        return Err(Error::Integrity(
            "checksum mismatch (truncated or corrupted file)".into(),
        ));
    }
    let mlen = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes")) as usize;
    let json = body
        .get(12..12 + mlen)
        .ok_or_else(|| Error::Integrity("manifest extends past the end of the file".into()))?;
    let value: serde_json::Value = serde_json::from_slice(json)
        .map_err(|e| Error::Integrity(format!("unreadable manifest: {e}")))?;
    let version = value.get("format_version").and_then(|v| v.as_u64());
    if version != Some(FORMAT_VERSION as u64) {
        return Err(Error::Version(format!(
            "manifest format version {version:?} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let manifest: Manifest = serde_json::from_value(value)
        .map_err(|e| Error::Integrity(format!("invalid manifest: {e}")))?;
    let payload = &body[12 + mlen..];
    let n = manifest.params_len;
    if payload.len() != 3 * n * 8 {
        return Err(Error::Integrity(format!(
            "payload holds {} bytes, manifest declares {}",
            payload.len(),
            3 * n * 8
        )));
    }
    let floats: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut offset = 0;
    for (entry, &t) in manifest.tensors.iter().zip(Tensor::ALL.iter()) {
        if entry.name != t.name() || entry.shape != manifest.dims.shape(t) || entry.offset != offset
        {
            return Err(Error::Integrity(format!(
                "tensor {} does not match the layout",
                entry.name
            )));
        }
        offset += entry.shape.iter().product::<usize>();
    }
    if manifest.tensors.len() != Tensor::ALL.len() || offset != n {
        return Err(Error::Integrity(
            "tensor table does not cover the payload".into(),
        ));
    }
    let params = Params::from_data(&manifest.dims, floats[..n].to_vec())?;
    let adam = AdamState {
        m: floats[n..2 * n].to_vec(),
        v: floats[2 * n..].to_vec(),
        t: manifest.adam_t,
    };
    let model = Model::from_parts(
        manifest.variant,
        params,
        Vocab::from_tokens(manifest.vocab),
        LabelInventory::new(manifest.labels),
    )?;
    Ok(Checkpoint {
        model,
        adam,
        dev_f1: f64::from_bits(manifest.dev_f1_bits),
        epoch: manifest.epoch,
    })
}

pub fn save_model(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ck)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}
