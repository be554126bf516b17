//! Startup checks every backend set must pass before use.

use serde::{Deserialize, Serialize};

use super::{Backends, ToyConfig};
use crate::types::{EMBED_DIM, STYLE_DIM};

/// Shapes the caller expects the backends to honour.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContractExpectations {
    pub num_layers: Option<usize>,
    pub style_dim: usize,
    pub embed_dim: usize,
    pub resolution: Option<(usize, usize)>,
    /// Prompt used to probe the text encoder when it has no vocabulary.
    pub probe_prompt: String,
}

impl Default for ContractExpectations {
    fn default() -> Self {
        Self {
            num_layers: None,
            style_dim: STYLE_DIM,
            embed_dim: EMBED_DIM,
            resolution: None,
            probe_prompt: "a face".into(),
        }
    }
}

impl ContractExpectations {
    pub fn toy(cfg: &ToyConfig) -> Self {
        Self {
            num_layers: Some(cfg.num_layers),
            style_dim: cfg.style_dim,
            embed_dim: cfg.embed_dim,
            resolution: Some((super::render::TOY_RESOLUTION, super::render::TOY_RESOLUTION)),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Warn,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContractReport {
    pub checks: Vec<CheckOutcome>,
}

impl ContractReport {
    fn push(&mut self, name: &str, status: CheckStatus, detail: impl Into<String>) {
        self.checks.push(CheckOutcome {
            name: name.into(),
            status,
            detail: detail.into(),
        });
    }

    fn expect(&mut self, name: &str, ok: bool, detail: impl Into<String>) {
        let status = if ok { CheckStatus::Pass } else { CheckStatus::Fail };
        self.push(name, status, detail);
    }

    pub fn failed(&self) -> bool {
        self.checks.iter().any(|c| c.status == CheckStatus::Fail)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Warn)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail)
    }

    pub fn summary(&self) -> String {
        let bad: Vec<String> = self
            .checks
            .iter()
            .filter(|c| c.status != CheckStatus::Pass)
            .map(|c| format!("{:?} {}: {}", c.status, c.name, c.detail))
            .collect();
        if bad.is_empty() {
            format!("all {} checks passed", self.checks.len())
        } else {
            bad.join("; ")
        }
    }
}

const NORM_TOL: f64 = 1e-6;

/// Verifies shapes, value ranges, determinism and frozen-ness.
pub fn check_backends(b: &Backends, expect: &ContractExpectations) -> ContractReport {
    let mut r = ContractReport::default();
    let synth = &b.synthesizer;

    let checksum = synth.parameter_checksum();
    let layers = synth.num_layers();
    match expect.num_layers {
        Some(n) => r.expect(
            "synthesizer.num_layers",
            layers == n,
            format!("{layers} layers, {n} configured"),
        ),
        None => r.expect("synthesizer.num_layers", layers > 0, format!("{layers} layers")),
    }
    r.expect(
        "synthesizer.style_dim",
        synth.style_dim() == expect.style_dim,
        format!("{} wide, {} expected", synth.style_dim(), expect.style_dim),
    );

    let w = synth.sample_content_code(0);
    let code_ok = w.shape() == (layers, synth.style_dim());
    r.expect("synthesizer.sample_shape", code_ok, format!("{:?}", w.shape()));
    r.expect(
        "synthesizer.sample_determinism",
        w == synth.sample_content_code(0),
        "same seed must give the same content code",
    );

    let image = if code_ok { synth.synthesize(&w).ok() } else { None };
    match &image {
        None => r.push("synthesizer.synthesize", CheckStatus::Fail, "could not synthesize a sampled code"),
        Some(img) => {
            let declared = synth.resolution();
            let got = (img.height(), img.width());
            let want = expect.resolution.unwrap_or(declared);
            r.expect(
                "synthesizer.resolution",
                got == declared && got == want,
                format!("rendered {got:?}, declared {declared:?}, expected {want:?}"),
            );
            let in_range = img.0.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v));
            r.expect("synthesizer.value_range", in_range, "pixels must lie in [-1, 1]");
            let again = synth.synthesize(&w).ok();
            r.expect(
                "synthesizer.determinism",
                again.as_ref() == Some(img),
                "same code must render the same image",
            );
        }
    }
    r.expect(
        "synthesizer.frozen",
        synth.parameter_checksum() == checksum,
        "parameter checksum changed during use",
    );

    let enc = &b.encoder;
    r.expect(
        "encoder.embed_dim",
        enc.embed_dim() == expect.embed_dim,
        format!("{} declared, {} expected", enc.embed_dim(), expect.embed_dim),
    );
    let vocab = enc.vocabulary();
    let prompt = vocab.first().cloned().unwrap_or_else(|| expect.probe_prompt.clone());
    match (enc.encode_text(&prompt), enc.encode_text(&prompt)) {
        (Ok(a), Ok(b2)) => {
            r.expect("encoder.text_dim", a.len() == expect.embed_dim, format!("{} values", a.len()));
            r.expect("encoder.text_determinism", a == b2, "text encoding must be deterministic");
            norm_check(&mut r, "encoder.text_normalized", a.norm());
        }
        (Err(e), _) | (_, Err(e)) => r.push("encoder.text", CheckStatus::Fail, e.to_string()),
    }
    if let Some(img) = &image {
        match (enc.encode_image(img), enc.encode_image(img)) {
            (Ok(a), Ok(b2)) => {
                r.expect("encoder.image_dim", a.len() == expect.embed_dim, format!("{} values", a.len()));
                r.expect("encoder.image_determinism", a == b2, "image encoding must be deterministic");
                r.expect("encoder.image_finite", a.0.iter().all(|v| v.is_finite()), "non-finite embedding");
                norm_check(&mut r, "encoder.image_normalized", a.norm());
            }
            (Err(e), _) | (_, Err(e)) => r.push("encoder.image", CheckStatus::Fail, e.to_string()),
        }

        match b.inverter.invert(img) {
            Ok(inv) => r.expect(
                "inverter.shape",
                inv.shape() == (layers, synth.style_dim()),
                format!("{:?}", inv.shape()),
            ),
            Err(e) => r.push("inverter.invert", CheckStatus::Fail, e.to_string()),
        }

        match b.perceptual.distance(img, img) {
            Ok(d) => r.expect("perceptual.identity", d.abs() <= 1e-12, format!("d(x, x) = {d}")),
            Err(e) => r.push("perceptual.identity", CheckStatus::Fail, e.to_string()),
        }
    }
    r
}

fn norm_check(r: &mut ContractReport, name: &str, norm: f64) {
    if (norm - 1.0).abs() <= NORM_TOL {
        r.push(name, CheckStatus::Pass, "unit norm");
    } else {
        r.push(
            name,
            CheckStatus::Warn,
            format!("norm {norm:.6}; contrastive normalization flag should stay on"),
        );
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use ndarray::{Array1, Array2, Array3};

    use super::*;
    use crate::backend::{EncoderBackend, SynthesizerBackend, ToyEncoder};
    use crate::error::Result;
    use crate::types::{EmbeddingVec, ImageTensor, WPlusCode};

    #[test]
    fn toy_backends_pass_every_check() {
        let cfg = ToyConfig::default();
        let r = check_backends(&Backends::toy(&cfg).unwrap(), &ContractExpectations::toy(&cfg));
        assert!(r.checks.iter().all(|c| c.status == CheckStatus::Pass), "{}", r.summary());
    }

    struct Layers17;

    impl SynthesizerBackend for Layers17 {
        fn name(&self) -> String {
            "seventeen".into()
        }
        fn num_layers(&self) -> usize {
            17
        }
        fn style_dim(&self) -> usize {
            STYLE_DIM
        }
        fn resolution(&self) -> (usize, usize) {
            (4, 4)
        }
        fn synthesize(&self, _: &WPlusCode) -> Result<ImageTensor> {
            Ok(ImageTensor::filled(4, 4, 0.0))
        }
        fn synthesize_vjp(&self, w: &WPlusCode, _: &Array3<f64>) -> Result<Array2<f64>> {
            Ok(Array2::zeros(w.shape()))
        }
        fn sample_content_code(&self, _: u64) -> WPlusCode {
            WPlusCode::zeros(17, STYLE_DIM)
        }
        fn parameter_checksum(&self) -> String {
            "0".into()
        }
    }

    #[test]
    fn wrong_layer_count_fails() {
        let mut b = Backends::toy(&ToyConfig::default()).unwrap();
        b.synthesizer = Arc::new(Layers17);
        let expect = ContractExpectations {
            num_layers: Some(18),
            ..Default::default()
        };
        let r = check_backends(&b, &expect);
        assert!(r.failed());
        assert!(r.failures().any(|c| c.name == "synthesizer.num_layers"));
    }

    struct Unnormalized(ToyEncoder);

    impl EncoderBackend for Unnormalized {
        fn name(&self) -> String {
            "unnormalized".into()
        }
        fn embed_dim(&self) -> usize {
            self.0.embed_dim()
        }
        fn encode_text(&self, p: &str) -> Result<EmbeddingVec> {
            Ok(EmbeddingVec(self.0.encode_text(p)?.0 * 3.0))
        }
        fn encode_image(&self, img: &ImageTensor) -> Result<EmbeddingVec> {
            self.0.encode_image(img)
        }
        fn encode_image_vjp(&self, img: &ImageTensor, g: &Array1<f64>) -> Result<Array3<f64>> {
            self.0.encode_image_vjp(img, g)
        }
        fn vocabulary(&self) -> Vec<String> {
            self.0.vocabulary()
        }
        fn trainable_parameter_groups(&self) -> Vec<String> {
            vec![]
        }
    }

    #[test]
    fn non_unit_encoder_warns() {
        let cfg = ToyConfig::default();
        let mut b = Backends::toy(&cfg).unwrap();
        b.encoder = Arc::new(Unnormalized(ToyEncoder::new(&cfg).unwrap()));
        let r = check_backends(&b, &ContractExpectations::toy(&cfg));
        assert!(!r.failed());
        let warned: Vec<_> = r.warnings().map(|c| c.name.clone()).collect();
        assert_eq!(warned, vec!["encoder.text_normalized".to_string()]);
    }
}
