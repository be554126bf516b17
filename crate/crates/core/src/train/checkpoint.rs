//! Versioned binary checkpoint: magic, format version, JSON manifest, then
//! little-endian `f64` blobs in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::metrics::{write_atomic, ByteReader};
use crate::params::Parameters;
use crate::pipeline::{Model, ModelShape};

const MAGIC: &[u8; 8] = b"TANIMCKP";
pub const FORMAT_VERSION: u32 = 1;

/// Trainable state (the synthesizer is never stored) plus everything needed
/// to resume exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: Config,
    /// Completed iterations.
    pub iteration: usize,
    pub model: Model,
    pub optimizer: Adam,
    /// Digest of the frozen synthesizer the model was trained against.
    pub synthesizer_checksum: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct RngState {
    seed: u64,
    /// Stream of the next iteration's batch draw.
    next_stream: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerState {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config_hash: String,
    iteration: usize,
    config: Config,
    rng: RngState,
    synthesizer_checksum: String,
    model: ModelShape,
    optimizer: OptimizerState,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn config_hash(&self) -> String {
        self.config.hash()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.model.tensors();
        if params.len() != self.optimizer.names.len() {
            return Err(Error::Checkpoint("optimizer state does not match the model".into()));
        }
        let mut tensors: Vec<TensorEntry> = params
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                len: t.data.len(),
            })
            .collect();
        for (prefix, moments) in [("adam.m.", &self.optimizer.first), ("adam.v.", &self.optimizer.second)] {
            for (t, m) in params.iter().zip(moments.iter()) {
                tensors.push(TensorEntry {
                    name: format!("{prefix}{}", t.name),
                    shape: t.shape.clone(),
                    len: m.len(),
                });
            }
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            config_hash: self.config_hash(),
            iteration: self.iteration,
            config: self.config.clone(),
            rng: RngState {
                seed: self.config.train.seed,
                next_stream: self.iteration as u64,
            },
            synthesizer_checksum: self.synthesizer_checksum.clone(),
            model: self.model.shape(),
            optimizer: OptimizerState {
                beta1: self.optimizer.beta1,
                beta2: self.optimizer.beta2,
                eps: self.optimizer.eps,
                step: self.optimizer.step,
            },
            tensors,
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| Error::Serde(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let blobs = params
            .iter()
            .map(|t| t.data)
            .chain(self.optimizer.first.iter().map(Vec::as_slice))
            .chain(self.optimizer.second.iter().map(Vec::as_slice));
        for blob in blobs {
            for v in blob {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(8) != Some(&MAGIC[..]) {
            return Err(bad("not a checkpoint file"));
        }
        let version = r.u32().ok_or_else(|| bad("truncated header"))?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let len = r.u64().ok_or_else(|| bad("truncated header"))? as usize;
        let json = r.take(len).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest =
            serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(bad("manifest version disagrees with header"));
        }
        if manifest.config.hash() != manifest.config_hash {
            return Err(bad("config hash does not match the stored config"));
        }
        let mut model = Model::skeleton(&manifest.config, &manifest.model)?;
        let mut optimizer = Adam::new(
            &model,
            manifest.optimizer.beta1,
            manifest.optimizer.beta2,
            manifest.optimizer.eps,
        );
        optimizer.step = manifest.optimizer.step;

        let mut blobs = std::collections::HashMap::new();
        for entry in &manifest.tensors {
            if entry.shape.iter().product::<usize>() != entry.len {
                return Err(Error::Checkpoint(format!("tensor `{}` shape/length mismatch", entry.name)));
            }
            let mut v = Vec::with_capacity(entry.len);
            for _ in 0..entry.len {
                v.push(r.f64().ok_or_else(|| bad("truncated tensor data"))?);
            }
            blobs.insert(entry.name.clone(), v);
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        let mut take = |name: &str, len: usize| -> Result<Vec<f64>> {
            let v = blobs
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if v.len() != len {
                return Err(Error::Checkpoint(format!("tensor `{name}` has the wrong size")));
            }
            Ok(v)
        };
        for (k, (name, dst)) in model.tensors_mut().into_iter().enumerate() {
            dst.copy_from_slice(&take(&name, dst.len())?);
            optimizer.first[k] = take(&format!("adam.m.{name}"), dst.len())?;
            optimizer.second[k] = take(&format!("adam.v.{name}"), dst.len())?;
        }
        if let Some(extra) = blobs.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
        }
        Ok(Self {
            config: manifest.config,
            iteration: manifest.iteration,
            model,
            optimizer,
            synthesizer_checksum: manifest.synthesizer_checksum,
        })
    }

    /// Writes atomically (temp file, then rename).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}
