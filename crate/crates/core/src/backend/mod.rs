//! Pluggable encoders, synthesizer, inverter and perceptual metric.

pub mod contract;
pub mod render;
pub mod toy;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{EmbeddingVec, ImageTensor, WPlusCode};

pub use contract::{check_backends, CheckStatus, ContractExpectations, ContractReport};
pub use toy::{ToyConfig, ToyEncoder, ToyInverter, ToySynthesizer, MultiScaleMse};

/// Environment variable naming an external adapter manifest.
pub const PLUGIN_ENV: &str = "TEXTANIM_BACKEND_PATH";

/// Image and text encoders sharing one joint embedding space.
pub trait EncoderBackend: Send + Sync {
    fn name(&self) -> String;
    fn embed_dim(&self) -> usize;
    fn encode_text(&self, prompt: &str) -> Result<EmbeddingVec>;
    fn encode_image(&self, img: &ImageTensor) -> Result<EmbeddingVec>;
    /// Pulls a gradient on the image embedding back to the pixels.
    fn encode_image_vjp(&self, img: &ImageTensor, grad: &Array1<f64>) -> Result<Array3<f64>>;
    /// Known prompts when the encoder has a closed vocabulary.
    fn vocabulary(&self) -> Vec<String>;
    fn trainable_parameter_groups(&self) -> Vec<String>;
}

/// Frozen generator from layered style codes to images.
pub trait SynthesizerBackend: Send + Sync {
    fn name(&self) -> String;
    fn num_layers(&self) -> usize;
    fn style_dim(&self) -> usize;
    fn resolution(&self) -> (usize, usize);
    fn synthesize(&self, w: &WPlusCode) -> Result<ImageTensor>;
    /// Pulls a pixel gradient back to the style code.
    fn synthesize_vjp(&self, w: &WPlusCode, grad_image: &Array3<f64>) -> Result<Array2<f64>>;
    fn sample_content_code(&self, seed: u64) -> WPlusCode;
    /// Digest of every parameter; must never change.
    fn parameter_checksum(&self) -> String;
}

pub trait InversionProvider: Send + Sync {
    fn name(&self) -> String;
    fn invert(&self, img: &ImageTensor) -> Result<WPlusCode>;
}

pub trait PerceptualBackend: Send + Sync {
    fn name(&self) -> String;
    fn distance(&self, a: &ImageTensor, b: &ImageTensor) -> Result<f64>;
    /// Distance and its gradient with respect to `a`.
    fn distance_grad(&self, a: &ImageTensor, b: &ImageTensor) -> Result<(f64, Array3<f64>)>;
}

/// One complete set of backends.
#[derive(Clone)]
pub struct Backends {
    pub encoder: Arc<dyn EncoderBackend>,
    pub synthesizer: Arc<dyn SynthesizerBackend>,
    pub inverter: Arc<dyn InversionProvider>,
    pub perceptual: Arc<dyn PerceptualBackend>,
}

impl fmt::Debug for Backends {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backends")
            .field("encoder", &self.encoder.name())
            .field("synthesizer", &self.synthesizer.name())
            .field("inverter", &self.inverter.name())
            .field("perceptual", &self.perceptual.name())
            .finish()
    }
}

impl Backends {
    pub fn toy(cfg: &ToyConfig) -> Result<Self> {
        let synth = ToySynthesizer::new(cfg)?;
        Ok(Self {
            encoder: Arc::new(ToyEncoder::new(cfg)?),
            inverter: Arc::new(ToyInverter::new(synth.clone())),
            synthesizer: Arc::new(synth),
            perceptual: Arc::new(MultiScaleMse),
        })
    }
}

/// Where backends come from: the built-in toy set or an adapter manifest.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum BackendSelection {
    #[default]
    Toy,
    /// Adapter manifest path; `None` defers to [`PLUGIN_ENV`].
    External(Option<PathBuf>),
}

impl BackendSelection {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "toy" => Ok(Self::Toy),
            "external" => Ok(Self::External(None)),
            other => match other.strip_prefix("external:") {
                Some(p) if !p.is_empty() => Ok(Self::External(Some(PathBuf::from(p)))),
                _ => Err(Error::config(
                    "backend",
                    format!("expected `toy` or `external:<path>`, got {other:?}"),
                )),
            },
        }
    }

    fn manifest_path(&self) -> Result<Option<PathBuf>> {
        match self {
            Self::Toy => Ok(None),
            Self::External(Some(p)) => Ok(Some(p.clone())),
            Self::External(None) => std::env::var_os(PLUGIN_ENV)
                .map(|p| Some(PathBuf::from(p)))
                .ok_or_else(|| {
                    Error::config("backend", format!("`external` requires a path or {PLUGIN_ENV}"))
                }),
        }
    }
}

impl fmt::Display for BackendSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Toy => f.write_str("toy"),
            Self::External(None) => f.write_str("external"),
            Self::External(Some(p)) => write!(f, "external:{}", p.display()),
        }
    }
}

impl Serialize for BackendSelection {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BackendSelection {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Adapter manifest: which registered factory to call and its options.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterManifest {
    pub factory: String,
    #[serde(default)]
    pub expect: ContractExpectations,
    #[serde(default = "empty_table")]
    pub options: toml::Value,
}

fn empty_table() -> toml::Value {
    toml::Value::Table(Default::default())
}

type Factory = Box<dyn Fn(&toml::Value, &Path) -> Result<Backends> + Send + Sync>;

/// Named backend constructors that adapter manifests can refer to.
pub struct BackendRegistry {
    factories: BTreeMap<String, Factory>,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        let mut r = Self {
            factories: BTreeMap::new(),
        };
        r.register("toy", |opts, _| {
            let cfg: ToyConfig = opts
                .clone()
                .try_into()
                .map_err(|e: toml::de::Error| Error::config("options", e.to_string()))?;
            Backends::toy(&cfg)
        });
        r
    }
}

impl BackendRegistry {
    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&toml::Value, &Path) -> Result<Backends> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<String> {
        self.factories.keys().cloned().collect()
    }

    /// Resolves a selection, loads the backends and enforces the contract.
    pub fn load(
        &self,
        selection: &BackendSelection,
        toy: &ToyConfig,
    ) -> Result<(Backends, ContractReport)> {
        let (backends, expect) = match selection.manifest_path()? {
            None => (Backends::toy(toy)?, ContractExpectations::toy(toy)),
            Some(path) => {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::io(format!("reading adapter manifest {}", path.display()), e))?;
                let manifest: AdapterManifest = toml::from_str(&text)
                    .map_err(|e| Error::config("adapter", e.to_string()))?;
                let factory = self.factories.get(&manifest.factory).ok_or_else(|| {
                    Error::Contract(format!(
                        "adapter factory {:?} is not registered (known: {:?})",
                        manifest.factory,
                        self.names()
                    ))
                })?;
                let base = path.parent().unwrap_or(Path::new("."));
                (factory(&manifest.options, base)?, manifest.expect)
            }
        };
        let report = check_backends(&backends, &expect);
        if report.failed() {
            return Err(Error::Contract(report.summary()));
        }
        Ok((backends, report))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_parses_and_prints() {
        assert_eq!(BackendSelection::parse("toy").unwrap(), BackendSelection::Toy);
        let ext = BackendSelection::parse("external:/tmp/a.toml").unwrap();
        assert_eq!(ext, BackendSelection::External(Some("/tmp/a.toml".into())));
        assert_eq!(ext.to_string(), "external:/tmp/a.toml");
        assert!(BackendSelection::parse("stylegan").is_err());
        assert!(BackendSelection::parse("external:").is_err());
    }

    #[test]
    fn registry_loads_toy_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adapter.toml");
        std::fs::write(
            &path,
            "factory = \"toy\"\n[expect]\nnum_layers = 4\n[options]\nvocabulary_size = 6\n",
        )
        .unwrap();
        let reg = BackendRegistry::default();
        let (b, report) = reg
            .load(&BackendSelection::External(Some(path)), &ToyConfig::default())
            .unwrap();
        assert_eq!(b.encoder.vocabulary().len(), 6);
        assert!(!report.failed());
    }

    #[test]
    fn unknown_factory_is_a_contract_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adapter.toml");
        std::fs::write(&path, "factory = \"clip-vit\"\n").unwrap();
        let err = BackendRegistry::default()
            .load(&BackendSelection::External(Some(path)), &ToyConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}
