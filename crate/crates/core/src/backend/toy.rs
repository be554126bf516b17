//! Desk-scale stand-ins for the cross-modal encoder, frame synthesizer,
//! inversion network and perceptual metric.
//!
//! Embeddings use the first `2k + 1` coordinates of the joint space: one
//! half-axis per attribute direction plus a constant neutral coordinate.

use ndarray::{Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::render::{AttributeExtractor, FaceRenderer, NUM_ATTRIBUTES};
use super::{EncoderBackend, InversionProvider, PerceptualBackend, SynthesizerBackend};
use crate::error::{Error, Result};
use crate::types::{EmbeddingVec, ImageTensor, WPlusCode, EMBED_DIM, STYLE_DIM};

/// Prompts of the toy vocabulary, indexed by embedding half-axis.
pub const TOY_PROMPTS: [&str; 2 * NUM_ATTRIBUTES] = [
    "the face is smiling",
    "the face is frowning",
    "the face is opening mouth",
    "the face is closing mouth",
    "the face is opening eyes wide",
    "the face is closing eyes",
    "the face is angry",
    "the face is worried",
];

/// Attribute index and direction (+1 / −1) steered by half-axis `axis`.
pub fn axis_target(axis: usize) -> (usize, f64) {
    (axis / 2, if axis % 2 == 0 { 1.0 } else { -1.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    /// Number of prompts taken from the front of the toy vocabulary.
    pub vocabulary_size: usize,
    pub num_layers: usize,
    pub style_dim: usize,
    pub embed_dim: usize,
    /// Seed of the frozen read-out from style codes to attributes.
    pub readout_seed: u64,
    /// Logit change per unit step along a read-out direction.
    pub readout_gain: f64,
    /// Standard deviation of sampled content codes.
    pub content_spread: f64,
    /// Sharpness of the soft half-axis response.
    pub sharpness: f64,
    /// Constant neutral coordinate of every image embedding.
    pub neutral: f64,
    /// Weight of the prompt-agnostic expression-intensity component.
    pub shared_intensity: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            vocabulary_size: TOY_PROMPTS.len(),
            num_layers: 4,
            style_dim: STYLE_DIM,
            embed_dim: EMBED_DIM,
            readout_seed: 1234,
            readout_gain: 8.0,
            content_spread: 0.15,
            sharpness: 10.0,
            neutral: 1.0,
            shared_intensity: 0.0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocabulary_size == 0 || self.vocabulary_size > TOY_PROMPTS.len() {
            return Err(Error::config(
                "toy.vocabulary_size",
                format!("must be in 1..={}", TOY_PROMPTS.len()),
            ));
        }
        if self.num_layers == 0 || self.style_dim == 0 {
            return Err(Error::config("toy.num_layers", "style shape must be positive"));
        }
        if self.embed_dim < 2 * NUM_ATTRIBUTES + 1 {
            return Err(Error::config(
                "toy.embed_dim",
                format!("must be at least {}", 2 * NUM_ATTRIBUTES + 1),
            ));
        }
        if self.num_layers * self.style_dim < NUM_ATTRIBUTES {
            return Err(Error::config("toy.style_dim", "style code too small for the read-out"));
        }
        for (key, v) in [
            ("toy.readout_gain", self.readout_gain),
            ("toy.sharpness", self.sharpness),
            ("toy.neutral", self.neutral),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be > 0, got {v}")));
            }
        }
        if !(self.content_spread >= 0.0 && self.shared_intensity >= 0.0) {
            return Err(Error::config("toy", "spread and intensity weights must be >= 0"));
        }
        Ok(())
    }

    pub fn prompts(&self) -> Vec<String> {
        TOY_PROMPTS[..self.vocabulary_size]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }
}

fn softplus(x: f64, beta: f64) -> f64 {
    let z = beta * x;
    (if z > 30.0 { z } else { z.exp().ln_1p() }) / beta
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const INTENSITY_EPS: f64 = 0.05;

/// Maps attribute vectors onto half-axis embedding coordinates.
#[derive(Debug, Clone)]
pub struct AttributeEmbedding {
    dim: usize,
    sharpness: f64,
    neutral: f64,
    shared: f64,
}

impl AttributeEmbedding {
    pub fn new(cfg: &ToyConfig) -> Self {
        Self {
            dim: cfg.embed_dim,
            sharpness: cfg.sharpness,
            neutral: cfg.neutral,
            shared: cfg.shared_intensity,
        }
    }

    fn intensity(&self, a: &[f64]) -> (f64, f64) {
        let d = a[super::render::MOUTH_OPENNESS] - 0.5;
        let root = (d * d + INTENSITY_EPS * INTENSITY_EPS).sqrt();
        (root - INTENSITY_EPS, d / root)
    }

    /// Unnormalized embedding.
    pub fn embed(&self, a: &[f64]) -> Array1<f64> {
        let mut e = Array1::zeros(self.dim);
        let (s, _) = self.intensity(a);
        for j in 0..NUM_ATTRIBUTES {
            let d = a[j] - 0.5;
            e[2 * j] = softplus(d, self.sharpness) + self.shared * s;
            e[2 * j + 1] = softplus(-d, self.sharpness) + self.shared * s;
        }
        e[2 * NUM_ATTRIBUTES] = self.neutral;
        e
    }

    /// Pulls an embedding gradient back to the attributes.
    pub fn embed_vjp(&self, a: &[f64], g: &Array1<f64>) -> Array1<f64> {
        let mut ga = Array1::zeros(NUM_ATTRIBUTES);
        let (_, ds) = self.intensity(a);
        let mut g_s = 0.0;
        for j in 0..NUM_ATTRIBUTES {
            let d = a[j] - 0.5;
            ga[j] += g[2 * j] * sigmoid(self.sharpness * d) - g[2 * j + 1] * sigmoid(-self.sharpness * d);
            g_s += self.shared * (g[2 * j] + g[2 * j + 1]);
        }
        ga[super::render::MOUTH_OPENNESS] += g_s * ds;
        ga
    }
}

/// Toy cross-modal encoder: a fixed prompt vocabulary on one side and the
/// attribute extractor plus half-axis embedding on the other.
#[derive(Debug, Clone)]
pub struct ToyEncoder {
    prompts: Vec<String>,
    extractor: AttributeExtractor,
    embedding: AttributeEmbedding,
    dim: usize,
}

impl ToyEncoder {
    pub fn new(cfg: &ToyConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            prompts: cfg.prompts(),
            extractor: AttributeExtractor::new(&FaceRenderer::new()),
            embedding: AttributeEmbedding::new(cfg),
            dim: cfg.embed_dim,
        })
    }

    pub fn extractor(&self) -> &AttributeExtractor {
        &self.extractor
    }

    pub fn axis_of(&self, prompt: &str) -> Result<usize> {
        self.prompts
            .iter()
            .position(|p| p == prompt)
            .ok_or_else(|| Error::Vocabulary {
                prompt: prompt.to_string(),
                known: self.prompts.clone(),
            })
    }
}

impl EncoderBackend for ToyEncoder {
    fn name(&self) -> String {
        "toy-attribute-encoder".into()
    }

    fn embed_dim(&self) -> usize {
        self.dim
    }

    fn encode_text(&self, prompt: &str) -> Result<EmbeddingVec> {
        Ok(EmbeddingVec::basis(self.dim, self.axis_of(prompt)?))
    }

    fn encode_image(&self, img: &ImageTensor) -> Result<EmbeddingVec> {
        let a = self.extractor.extract(img)?;
        let e = self.embedding.embed(a.as_slice().expect("contiguous"));
        Ok(EmbeddingVec(e).normalized())
    }

    fn encode_image_vjp(&self, img: &ImageTensor, grad: &Array1<f64>) -> Result<Array3<f64>> {
        if grad.len() != self.dim {
            return Err(Error::Shape("embedding gradient width".into()));
        }
        let a = self.extractor.extract(img)?;
        let a = a.as_slice().expect("contiguous");
        let e = self.embedding.embed(a);
        let norm = e.dot(&e).sqrt();
        let unit = &e / norm;
        let g_e = (grad - &(&unit * unit.dot(grad))) / norm;
        let g_a = self.embedding.embed_vjp(a, &g_e);
        self.extractor.extract_vjp(img, &g_a)
    }

    fn vocabulary(&self) -> Vec<String> {
        self.prompts.clone()
    }

    fn trainable_parameter_groups(&self) -> Vec<String> {
        vec!["text_embedding_table".into()]
    }
}

/// Frozen toy synthesizer: an orthonormal read-out from the style code to
/// attribute logits, a sigmoid squash and the face renderer.
#[derive(Debug, Clone)]
pub struct ToySynthesizer {
    /// (attributes × L·D), rows orthonormal.
    readout: Array2<f64>,
    gain: f64,
    num_layers: usize,
    style_dim: usize,
    content_spread: f64,
    renderer: FaceRenderer,
}

impl ToySynthesizer {
    pub fn new(cfg: &ToyConfig) -> Result<Self> {
        cfg.validate()?;
        let width = cfg.num_layers * cfg.style_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.readout_seed);
        let normal = Normal::new(0.0, 1.0).expect("valid std");
        let mut rows: Vec<Array1<f64>> = Vec::with_capacity(NUM_ATTRIBUTES);
        while rows.len() < NUM_ATTRIBUTES {
            let mut v = Array1::from_shape_simple_fn(width, || normal.sample(&mut rng));
            for r in &rows {
                let p = r.dot(&v);
                v.scaled_add(-p, r);
            }
            let n = v.dot(&v).sqrt();
            if n > 1e-8 {
                rows.push(v / n);
            }
        }
        let mut readout = Array2::zeros((NUM_ATTRIBUTES, width));
        for (k, r) in rows.iter().enumerate() {
            readout.row_mut(k).assign(r);
        }
        Ok(Self {
            readout,
            gain: cfg.readout_gain,
            num_layers: cfg.num_layers,
            style_dim: cfg.style_dim,
            content_spread: cfg.content_spread,
            renderer: FaceRenderer::new(),
        })
    }

    pub fn renderer(&self) -> &FaceRenderer {
        &self.renderer
    }

    fn check(&self, w: &WPlusCode) -> Result<()> {
        if w.shape() != (self.num_layers, self.style_dim) {
            return Err(Error::Shape(format!(
                "toy synthesizer expects {}x{} codes, got {:?}",
                self.num_layers,
                self.style_dim,
                w.shape()
            )));
        }
        Ok(())
    }

    fn flat<'a>(&self, w: &'a WPlusCode) -> ndarray::ArrayView1<'a, f64> {
        w.0.view()
            .into_shape_with_order(self.num_layers * self.style_dim)
            .expect("standard layout code")
    }

    /// Attribute logits before the sigmoid.
    pub fn logits(&self, w: &WPlusCode) -> Result<Array1<f64>> {
        self.check(w)?;
        let code = w.0.as_standard_layout();
        let flat = code
            .view()
            .into_shape_with_order(self.num_layers * self.style_dim)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.readout.dot(&flat) * self.gain)
    }

    /// Attributes the synthesizer would render for `w`.
    pub fn attributes(&self, w: &WPlusCode) -> Result<Array1<f64>> {
        Ok(self.logits(w)?.mapv(sigmoid))
    }

    /// Unit style direction that moves only attribute `k`'s logit.
    pub fn attribute_direction(&self, k: usize) -> WPlusCode {
        let row = self.readout.row(k).to_owned();
        WPlusCode(
            row.into_shape_with_order((self.num_layers, self.style_dim))
                .expect("read-out width matches code"),
        )
    }

    /// Minimum-norm code whose logits equal `logits`.
    pub fn preimage(&self, logits: &Array1<f64>) -> WPlusCode {
        let flat = self.readout.t().dot(logits) / self.gain;
        WPlusCode(
            flat.into_shape_with_order((self.num_layers, self.style_dim))
                .expect("read-out width matches code"),
        )
    }
}

impl SynthesizerBackend for ToySynthesizer {
    fn name(&self) -> String {
        "toy-face-synthesizer".into()
    }

    fn num_layers(&self) -> usize {
        self.num_layers
    }

    fn style_dim(&self) -> usize {
        self.style_dim
    }

    fn resolution(&self) -> (usize, usize) {
        self.renderer.resolution()
    }

    fn synthesize(&self, w: &WPlusCode) -> Result<ImageTensor> {
        let a = self.attributes(w)?;
        self.renderer.render(a.as_slice().expect("contiguous"))
    }

    fn synthesize_vjp(&self, w: &WPlusCode, grad_image: &Array3<f64>) -> Result<Array2<f64>> {
        let a = self.attributes(w)?;
        let g_a = self.renderer.render_vjp(a.as_slice().expect("contiguous"), grad_image)?;
        let g_logit = &g_a * &a.mapv(|v| v * (1.0 - v)) * self.gain;
        let flat = self.readout.t().dot(&g_logit);
        flat.into_shape_with_order((self.num_layers, self.style_dim))
            .map_err(|e| Error::Shape(e.to_string()))
    }

    fn sample_content_code(&self, seed: u64) -> WPlusCode {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("valid std");
        let g = Array1::from_shape_simple_fn(self.style_dim, || normal.sample(&mut rng) * self.content_spread);
        // One style vector shared by every layer, like a mapping-network output.
        let mut w = Array2::zeros((self.num_layers, self.style_dim));
        for mut row in w.rows_mut() {
            row.assign(&g);
        }
        // Spread the per-attribute logits evenly regardless of how the
        // broadcast code projects onto the read-out.
        let code = WPlusCode(w);
        let logits = self.readout.dot(&self.flat(&code)) * self.gain;
        let target = Array1::from_shape_simple_fn(NUM_ATTRIBUTES, || normal.sample(&mut rng) * self.content_spread);
        let fix = self.preimage(&(target - logits));
        WPlusCode(code.0 + fix.0)
    }

    fn parameter_checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self.readout.iter() {
            h.update(v.to_le_bytes());
        }
        h.update(self.gain.to_le_bytes());
        for v in self.renderer.background().iter() {
            h.update(v.to_le_bytes());
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Inverts toy images by reading their attributes and taking the
/// minimum-norm preimage of the corresponding logits.
#[derive(Debug, Clone)]
pub struct ToyInverter {
    synth: ToySynthesizer,
    extractor: AttributeExtractor,
}

impl ToyInverter {
    pub fn new(synth: ToySynthesizer) -> Self {
        let extractor = AttributeExtractor::new(synth.renderer());
        Self { synth, extractor }
    }
}

impl InversionProvider for ToyInverter {
    fn name(&self) -> String {
        "toy-inverter".into()
    }

    fn invert(&self, img: &ImageTensor) -> Result<WPlusCode> {
        let a = self.extractor.extract(img)?;
        let logits = a.mapv(|v| {
            let v = v.clamp(0.02, 0.98);
            (v / (1.0 - v)).ln()
        });
        Ok(self.synth.preimage(&logits))
    }
}

/// Mean squared pixel distance averaged over 1×, ½× and ¼× average-pooled copies.
#[derive(Debug, Clone, Copy, Default)]
pub struct MultiScaleMse;

fn pool2(x: &Array3<f64>) -> Array3<f64> {
    let (h, w, c) = x.dim();
    Array3::from_shape_fn((h / 2, w / 2, c), |(y, xx, ch)| {
        0.25 * (x[[2 * y, 2 * xx, ch]]
            + x[[2 * y + 1, 2 * xx, ch]]
            + x[[2 * y, 2 * xx + 1, ch]]
            + x[[2 * y + 1, 2 * xx + 1, ch]])
    })
}

const SCALES: usize = 3;

impl MultiScaleMse {
    fn pyramid(diff: Array3<f64>) -> Vec<Array3<f64>> {
        let mut levels = vec![diff];
        for _ in 1..SCALES {
            let next = pool2(levels.last().expect("non-empty"));
            if next.is_empty() {
                break;
            }
            levels.push(next);
        }
        levels
    }
}

impl PerceptualBackend for MultiScaleMse {
    fn name(&self) -> String {
        "multi-scale-mse".into()
    }

    fn distance(&self, a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
        if a.0.dim() != b.0.dim() {
            return Err(Error::Shape("perceptual distance needs equal shapes".into()));
        }
        let levels = Self::pyramid(&a.0 - &b.0);
        let n = levels.len() as f64;
        Ok(levels
            .iter()
            .map(|d| d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64)
            .sum::<f64>()
            / n)
    }

    fn distance_grad(&self, a: &ImageTensor, b: &ImageTensor) -> Result<(f64, Array3<f64>)> {
        let value = self.distance(a, b)?;
        let levels = Self::pyramid(&a.0 - &b.0);
        let n = levels.len() as f64;
        let (h, w, c) = a.0.dim();
        let mut grad = Array3::zeros((h, w, c));
        for (k, d) in levels.iter().enumerate() {
            let factor = 2.0 / (d.len() as f64 * n);
            let block = 1usize << k;
            let spread = 1.0 / (block * block) as f64;
            let (lh, lw, _) = d.dim();
            for y in 0..lh * block {
                for x in 0..lw * block {
                    for ch in 0..c {
                        grad[[y, x, ch]] += factor * d[[y / block, x / block, ch]] * spread;
                    }
                }
            }
        }
        Ok((value, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::render::{EYE_OPENNESS, MOUTH_CURVATURE};

    #[test]
    fn text_embeddings_are_orthogonal_half_axes() {
        let enc = ToyEncoder::new(&ToyConfig::default()).unwrap();
        let smile = enc.encode_text("the face is smiling").unwrap();
        assert_eq!(smile, EmbeddingVec::basis(EMBED_DIM, 0));
        assert_eq!(smile, enc.encode_text("the face is smiling").unwrap());
        for (i, p) in TOY_PROMPTS.iter().enumerate() {
            for q in &TOY_PROMPTS[i + 1..] {
                let c = enc.encode_text(p).unwrap().cosine(&enc.encode_text(q).unwrap());
                assert_eq!(c, 0.0);
            }
        }
    }

    #[test]
    fn unknown_prompt_lists_vocabulary() {
        let enc = ToyEncoder::new(&ToyConfig::default()).unwrap();
        match enc.encode_text("the face is dancing") {
            Err(Error::Vocabulary { known, .. }) => assert_eq!(known.len(), 8),
            other => panic!("expected vocabulary error, got {other:?}"),
        }
    }

    #[test]
    fn image_embedding_is_unit_norm() {
        let cfg = ToyConfig::default();
        let enc = ToyEncoder::new(&cfg).unwrap();
        let img = FaceRenderer::new().render(&[0.3, 0.6, 0.5, 0.8]).unwrap();
        let e = enc.encode_image(&img).unwrap();
        assert_eq!(e.len(), EMBED_DIM);
        assert!((e.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn image_embedding_gradient_matches_finite_differences() {
        let enc = ToyEncoder::new(&ToyConfig::default()).unwrap();
        let img = FaceRenderer::new().render(&[0.65, 0.3, 0.55, 0.45]).unwrap();
        let img = crate::backend::render::inked(enc.extractor(), &img, 0.03);
        let g = Array1::from_shape_fn(EMBED_DIM, |i| ((i * 7 % 5) as f64 - 2.0) * 0.3);
        let analytic = enc.encode_image_vjp(&img, &g).unwrap();
        let shape = img.0.dim();
        let x: Vec<f64> = img.0.iter().copied().collect();
        let mut f = |v: &[f64]| {
            let probe = ImageTensor(Array3::from_shape_vec(shape, v.to_vec()).unwrap());
            enc.encode_image(&probe).unwrap().0.dot(&g)
        };
        let err = crate::testing::grad_error(&mut f, &x, &analytic.iter().copied().collect::<Vec<_>>(), 1e-5);
        assert!(err <= 1e-3, "relative error {err}");
    }

    proptest::proptest! {
        #[test]
        fn displaced_attribute_retrieves_its_prompt(
            axis in 0usize..8,
            delta in 0.15f64..0.45,
            jitter in proptest::collection::vec(-0.05f64..0.05, NUM_ATTRIBUTES),
        ) {
            let enc = ToyEncoder::new(&ToyConfig::default()).unwrap();
            let (attr, sign) = axis_target(axis);
            let mut a: Vec<f64> = jitter.iter().map(|j| 0.5 + j).collect();
            a[attr] = 0.5 + sign * delta;
            let img = FaceRenderer::new().render(&a).unwrap();
            let e = enc.encode_image(&img).unwrap();
            let scores: Vec<f64> = TOY_PROMPTS.iter().map(|p| e.dot(&enc.encode_text(p).unwrap())).collect();
            let best = (0..scores.len()).max_by(|&i, &j| scores[i].total_cmp(&scores[j])).unwrap();
            proptest::prop_assert_eq!(best, axis);
        }
    }

    #[test]
    fn neutral_code_renders_midpoint_face() {
        let synth = ToySynthesizer::new(&ToyConfig::default()).unwrap();
        let w = WPlusCode::zeros(4, STYLE_DIM);
        let a = synth.attributes(&w).unwrap();
        assert!(a.iter().all(|&v| v == 0.5));
        let img = synth.synthesize(&w).unwrap();
        assert_eq!(img, synth.renderer().render(&[0.5; 4]).unwrap());
        assert_eq!(img, synth.synthesize(&w).unwrap());
    }

    #[test]
    fn mouth_direction_sweep_raises_curvature() {
        let cfg = ToyConfig::default();
        let synth = ToySynthesizer::new(&cfg).unwrap();
        let enc = ToyEncoder::new(&cfg).unwrap();
        let dir = synth.attribute_direction(MOUTH_CURVATURE);
        let base = synth.sample_content_code(3);
        let mut prev = f64::NEG_INFINITY;
        for step in 0..10 {
            let w = WPlusCode(&base.0 + &(&dir.0 * (step as f64 * 0.25)));
            let got = enc.extractor().extract(&synth.synthesize(&w).unwrap()).unwrap();
            assert!(got[MOUTH_CURVATURE] > prev, "step {step}");
            prev = got[MOUTH_CURVATURE];
        }
    }

    #[test]
    fn attribute_directions_are_orthonormal() {
        let synth = ToySynthesizer::new(&ToyConfig::default()).unwrap();
        for i in 0..NUM_ATTRIBUTES {
            for j in 0..NUM_ATTRIBUTES {
                let d = synth.attribute_direction(i).0.iter()
                    .zip(synth.attribute_direction(j).0.iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((d - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inverter_reconstructs_attributes() {
        let cfg = ToyConfig::default();
        let synth = ToySynthesizer::new(&cfg).unwrap();
        let inv = ToyInverter::new(synth.clone());
        let a = [0.35, 0.6, 0.7, 0.45];
        let img = synth.renderer().render(&a).unwrap();
        let w = inv.invert(&img).unwrap();
        let back = synth.attributes(&w).unwrap();
        for k in 0..4 {
            assert!((back[k] - a[k]).abs() < 0.05);
        }
        assert_eq!(w.shape(), (4, STYLE_DIM));
    }

    #[test]
    fn sampled_content_is_seeded() {
        let synth = ToySynthesizer::new(&ToyConfig::default()).unwrap();
        assert_eq!(synth.sample_content_code(5), synth.sample_content_code(5));
        assert_ne!(synth.sample_content_code(5), synth.sample_content_code(6));
    }

    #[test]
    fn multiscale_mse_constant_offset() {
        let a = FaceRenderer::new().render(&[0.5; 4]).unwrap();
        let b = ImageTensor(a.0.mapv(|v| v + 0.1));
        let d = MultiScaleMse.distance(&a, &b).unwrap();
        assert!((d - 0.01).abs() < 1e-12);
        assert_eq!(MultiScaleMse.distance(&a, &a).unwrap(), 0.0);
        assert_eq!(d, MultiScaleMse.distance(&b, &a).unwrap());
    }

    #[test]
    fn equal_curvature_gives_equal_mouth_projection() {
        let enc = ToyEncoder::new(&ToyConfig::default()).unwrap();
        let r = FaceRenderer::new();
        let mut a = [0.7, 0.5, 0.4, 0.5];
        let e1 = enc.encode_image(&r.render(&a).unwrap()).unwrap();
        a[EYE_OPENNESS] = 0.6;
        let e2 = enc.encode_image(&r.render(&a).unwrap()).unwrap();
        assert!((e1.0[0] - e2.0[0]).abs() <= 0.02);
    }
}
