//! TOML run configuration with defaults, strict keys and validation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{BackendSelection, ToyConfig};
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::mapper::MapperConfig;
use crate::train::TrainConfig;

/// Everything a training or animation run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub backend: BackendSelection,
    pub train: TrainConfig,
    pub loss: LossWeights,
    pub mapper: MapperConfig,
    pub toy: ToyConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<file>", e.to_string()))?;
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            let key = if key == "." { "<root>".to_string() } else { key };
            Error::config(key, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.loss.validate()?;
        if self.mapper.depth == 0 {
            return Err(Error::config("mapper.depth", "must be >= 1"));
        }
        if self.mapper.hidden_dim == 0 {
            return Err(Error::config("mapper.hidden_dim", "must be >= 1"));
        }
        if !(self.mapper.output_scale.is_finite() && self.mapper.output_scale >= 0.0) {
            return Err(Error::config("mapper.output_scale", "must be finite and >= 0"));
        }
        self.toy.validate()?;
        if self.backend == BackendSelection::Toy && self.train.batch_size > self.toy.vocabulary_size {
            return Err(Error::config(
                "train.batch_size",
                format!(
                    "batch of {} distinct prompts exceeds the vocabulary of {}",
                    self.train.batch_size, self.toy.vocabulary_size
                ),
            ));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        crate::backend::toy::hex(&Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::PipelineMode;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = Config::from_toml_str("").unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.train.frames, 16);
        assert_eq!(cfg.train.iterations, 2000);
        assert_eq!(cfg.train.lr_encoders, 1e-5);
        assert_eq!(cfg.train.lr_mappers, 1e-3);
        assert_eq!(cfg.train.lr_recurrent, 1e-3);
        assert_eq!(cfg.train.adam_betas, [0.0, 0.999]);
        let w = cfg.loss;
        assert_eq!((w.w_reg, w.path_reg, w.cont, w.lpips), (1.0, 1.0, 0.5, 1.0));
        assert_eq!(w.temperature, 0.07);
        assert_eq!(cfg.train.mode, PipelineMode::Sampled);
    }

    #[test]
    fn zero_batch_names_the_key() {
        match Config::from_toml_str("[train]\nbatch_size = 0\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "train.batch_size"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_and_mistyped_keys_carry_paths() {
        match Config::from_toml_str("[train]\nbatchsize = 3\n") {
            Err(Error::Config { key, message }) => {
                assert_eq!(key, "train.batchsize");
                assert!(message.contains("batchsize"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        match Config::from_toml_str("[loss]\nw_reg = \"big\"\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "loss.w_reg"),
            other => panic!("{other:?}"),
        }
        match Config::from_toml_str("[loss]\ntemperature = 0.0\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "loss.temperature"),
            other => panic!("{other:?}"),
        }
        match Config::from_toml_str("backend = \"gpu\"\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "backend"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn serialize_round_trip() {
        let text = "backend = \"toy\"\n[train]\nbatch_size = 2\nframes = 5\nseed = 9\nmode = \"sampled\"\n\
                    [loss]\npath_reg = 0.0\n[mapper]\nheads = \"per_group\"\n[toy]\nvocabulary_size = 4\n";
        let cfg = Config::from_toml_str(text).unwrap();
        let again = Config::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
        assert_ne!(cfg.hash(), Config::default().hash());
    }
}
