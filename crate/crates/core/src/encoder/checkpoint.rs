//! Binary checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "RSEL" | u32 version | u8 kind | u64 vocab fingerprint
//! str config (JSON) | str meta
//! u32 tensor count
//! per tensor: str name | u32 ndim | u64 dims... | f32 values...
//! ```
//!
//! Strings are `u32` length + UTF-8 bytes.

use std::path::Path;

use super::{Encoder, EncoderConfig};
use crate::binio::{ArtifactKind, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};
use crate::textpipe::stable_hash;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Named float32 tensors plus the metadata needed to rebuild a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ArtifactKind,
    pub vocab_fingerprint: u64,
    /// Kind-specific configuration as JSON.
    pub config: String,
    /// Free-form provenance, e.g. the effective run configuration.
    pub meta: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub(crate) fn from_encoder(encoder: &Encoder<f32>, meta: &str) -> Self {
        Self {
            kind: ArtifactKind::Encoder,
            vocab_fingerprint: encoder.vocab_fingerprint(),
            config: serde_json::to_string(encoder.config()).expect("config serializes"),
            meta: meta.to_string(),
            tensors: encoder
                .store()
                .iter()
                .map(|p| (p.name().to_string(), p.value().clone()))
                .collect(),
        }
    }

    /// Rebuilds an encoder without checking the vocabulary fingerprint.
    pub fn to_encoder(&self) -> Result<Encoder<f32>> {
        if self.kind != ArtifactKind::Encoder {
            return Err(Error::format("checkpoint", format!("{:?} is not an encoder", self.kind)));
        }
        let config: EncoderConfig = serde_json::from_str(&self.config)?;
        let mut store = ParamStore::new();
        for (name, tensor) in &self.tensors {
            if !tensor.all_finite() {
                return Err(Error::format("checkpoint", format!("non-finite values in {name}")));
            }
            if super::is_sparse_table(name) {
                store.add_sparse(name, tensor.clone())?;
            } else {
                store.add(name, tensor.clone())?;
            }
        }
        Encoder::from_store(config, store, self.vocab_fingerprint)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_header(self.kind, CHECKPOINT_VERSION);
        w.u64(self.vocab_fingerprint);
        w.str(&self.config);
        w.str(&self.meta);
        w.u32(self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            w.str(name);
            w.u32(t.shape().len() as u32);
            for &d in t.shape() {
                w.u64(d as u64);
            }
            w.f32s(t.data());
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], kind: ArtifactKind) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "checkpoint");
        r.header(kind, CHECKPOINT_VERSION)?;
        let vocab_fingerprint = r.u64()?;
        let config = r.str()?;
        let meta = r.str()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.str()?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::format("checkpoint", "shape overflow"))?;
            tensors.push((name, Tensor::new(shape, r.f32s(n)?)?));
        }
        r.finish()?;
        Ok(Self {
            kind,
            vocab_fingerprint,
            config,
            meta,
            tensors,
        })
    }

    /// Hash of the serialized checkpoint.
    pub fn fingerprint(&self) -> u64 {
        stable_hash(&self.to_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, kind: ArtifactKind) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, kind)
    }
}
