//! Training objectives over latent trajectories, last-frame embeddings and
//! rendered frames.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::backend::PerceptualBackend;
use crate::error::{Error, Result};
use crate::types::{sequence_deltas, EmbeddingVec, ImageTensor, WPlusCode};

/// Weights of the overall objective and the contrastive temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub w_reg: f64,
    pub path_reg: f64,
    pub cont: f64,
    pub lpips: f64,
    pub temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_reg: 1.0,
            path_reg: 1.0,
            cont: 0.5,
            lpips: 1.0,
            temperature: 0.07,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("loss.w_reg", self.w_reg),
            ("loss.path_reg", self.path_reg),
            ("loss.cont", self.cont),
            ("loss.lpips", self.lpips),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config(
                "loss.temperature",
                format!("must be > 0, got {}", self.temperature),
            ));
        }
        Ok(())
    }
}

/// Which difference the path regularizer penalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PathRegOrder {
    /// `Σ ‖δ^(i+1) − δ^(i)‖²` (constant latent velocity).
    #[default]
    Second,
    /// `Σ ‖δ^(i)‖²` (ablation).
    First,
}

/// How last-frame embeddings are tied to their prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentObjective {
    /// Softmax cross-entropy over the batch's prompts.
    #[default]
    Contrastive,
    /// Maximize each pair's similarity on its own (ablation).
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveOptions {
    pub normalize: bool,
    pub symmetric: bool,
}

impl Default for ContrastiveOptions {
    fn default() -> Self {
        Self {
            normalize: true,
            symmetric: false,
        }
    }
}

fn check_uniform(seq: &[WPlusCode], anchor: Option<&WPlusCode>) -> Result<()> {
    let shape = anchor.map(|a| a.shape()).or_else(|| seq.first().map(|w| w.shape()));
    if let Some(shape) = shape {
        if seq.iter().any(|w| w.shape() != shape) {
            return Err(Error::Shape("trajectory codes differ in shape".into()));
        }
    }
    Ok(())
}

/// `Σ_i ‖w^(i) − w_s‖²`.
pub fn w_reg_loss(seq: &[WPlusCode], w_s: &WPlusCode) -> Result<f64> {
    check_uniform(seq, Some(w_s))?;
    Ok(seq
        .iter()
        .map(|w| {
            w.0.iter()
                .zip(w_s.0.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum())
}

/// Gradients of [`w_reg_loss`] w.r.t. each code and the anchor.
pub fn w_reg_grad(seq: &[WPlusCode], w_s: &WPlusCode) -> Result<(Vec<Array2<f64>>, Array2<f64>)> {
    check_uniform(seq, Some(w_s))?;
    let grads: Vec<Array2<f64>> = seq.iter().map(|w| (&w.0 - &w_s.0) * 2.0).collect();
    let mut g_anchor = Array2::zeros(w_s.0.dim());
    for g in &grads {
        g_anchor -= g;
    }
    Ok((grads, g_anchor))
}

/// Path regularizer; zero for sequences too short to form a term.
pub fn path_reg_loss(seq: &[WPlusCode], order: PathRegOrder) -> Result<f64> {
    check_uniform(seq, None)?;
    if seq.len() < 2 {
        return Ok(0.0);
    }
    let deltas = sequence_deltas(seq)?;
    Ok(match order {
        PathRegOrder::Second => deltas
            .windows(2)
            .map(|d| {
                d[1].0
                    .iter()
                    .zip(d[0].0.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum(),
        PathRegOrder::First => deltas.iter().map(WPlusCode::norm_sq).sum(),
    })
}

pub fn path_reg_grad(seq: &[WPlusCode], order: PathRegOrder) -> Result<Vec<Array2<f64>>> {
    check_uniform(seq, None)?;
    let mut grads: Vec<Array2<f64>> = seq.iter().map(|w| Array2::zeros(w.0.dim())).collect();
    if seq.len() < 2 {
        return Ok(grads);
    }
    let deltas = sequence_deltas(seq)?;
    match order {
        PathRegOrder::Second => {
            for i in 0..deltas.len().saturating_sub(1) {
                let e = (&deltas[i + 1].0 - &deltas[i].0) * 2.0;
                grads[i + 2] += &e;
                grads[i + 1].scaled_add(-2.0, &e);
                grads[i] += &e;
            }
        }
        PathRegOrder::First => {
            for (i, d) in deltas.iter().enumerate() {
                let e = &d.0 * 2.0;
                grads[i + 1] += &e;
                grads[i] -= &e;
            }
        }
    }
    Ok(grads)
}

/// Result of an alignment objective with gradients for both embedding sets.
#[derive(Debug, Clone)]
pub struct AlignmentEval {
    pub value: f64,
    pub grad_images: Vec<Array1<f64>>,
    pub grad_texts: Vec<Array1<f64>>,
}

fn prepare(v: &[EmbeddingVec], normalize: bool) -> Vec<(Array1<f64>, f64)> {
    v.iter()
        .map(|e| {
            let n = e.norm();
            if normalize && n > 0.0 {
                (&e.0 / n, n)
            } else {
                (e.0.clone(), 1.0)
            }
        })
        .collect()
}

/// Pulls a gradient on the unit vector `u = x / ‖x‖` back onto `x`.
fn unnormalize_grad(g: &Array1<f64>, unit: &Array1<f64>, norm: f64, normalize: bool) -> Array1<f64> {
    if !normalize || norm == 0.0 {
        return g.clone();
    }
    (g - &(unit * unit.dot(g))) / norm
}

fn check_pairs(images: &[EmbeddingVec], texts: &[EmbeddingVec], tau: f64) -> Result<()> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {tau}")));
    }
    if images.is_empty() || images.len() != texts.len() {
        return Err(Error::Shape(format!(
            "{} image embeddings vs {} text embeddings",
            images.len(),
            texts.len()
        )));
    }
    let d = images[0].len();
    if images.iter().chain(texts).any(|e| e.len() != d) {
        return Err(Error::Shape("embedding widths differ".into()));
    }
    Ok(())
}

fn log_softmax_row(logits: &[f64]) -> Vec<f64> {
    let (arg, m) = logits
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, l)| if l > acc.1 { (i, l) } else { acc });
    // The max term contributes exactly 1; summing the rest separately keeps
    // precision when the softmax is nearly one-hot.
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, l)| (l - m).exp())
        .sum();
    let tail = rest.ln_1p();
    logits.iter().map(|l| (l - m) - tail).collect()
}

/// Image→text softmax cross-entropy over a batch of matched pairs.
pub fn contrastive_eval(
    images: &[EmbeddingVec],
    texts: &[EmbeddingVec],
    tau: f64,
    opts: ContrastiveOptions,
) -> Result<AlignmentEval> {
    check_pairs(images, texts, tau)?;
    let n = images.len();
    let v = prepare(images, opts.normalize);
    let t = prepare(texts, opts.normalize);
    let logits: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| v[i].0.dot(&t[j].0) / tau).collect())
        .collect();
    // d loss / d logit
    let mut dlogit = vec![vec![0.0; n]; n];
    let mut value = 0.0;
    let row_weight = if opts.symmetric { 0.5 } else { 1.0 };
    for i in 0..n {
        let ls = log_softmax_row(&logits[i]);
        value -= row_weight * ls[i];
        for j in 0..n {
            dlogit[i][j] += row_weight * (ls[j].exp() - if i == j { 1.0 } else { 0.0 });
        }
    }
    if opts.symmetric {
        for j in 0..n {
            let col: Vec<f64> = (0..n).map(|i| logits[i][j]).collect();
            let ls = log_softmax_row(&col);
            value -= 0.5 * ls[j];
            for i in 0..n {
                dlogit[i][j] += 0.5 * (ls[i].exp() - if i == j { 1.0 } else { 0.0 });
            }
        }
    }
    let dim = images[0].len();
    let mut gv = vec![Array1::zeros(dim); n];
    let mut gt = vec![Array1::zeros(dim); n];
    for i in 0..n {
        for j in 0..n {
            let c = dlogit[i][j] / tau;
            gv[i].scaled_add(c, &t[j].0);
            gt[j].scaled_add(c, &v[i].0);
        }
    }
    let grad_images = (0..n)
        .map(|i| unnormalize_grad(&gv[i], &v[i].0, v[i].1, opts.normalize))
        .collect();
    let grad_texts = (0..n)
        .map(|j| unnormalize_grad(&gt[j], &t[j].0, t[j].1, opts.normalize))
        .collect();
    Ok(AlignmentEval {
        value,
        grad_images,
        grad_texts,
    })
}

/// `−Σ_i log softmax_j(v_i·t_j / τ)_i`.
pub fn contrastive_loss(
    images: &[EmbeddingVec],
    texts: &[EmbeddingVec],
    tau: f64,
    opts: ContrastiveOptions,
) -> Result<f64> {
    contrastive_eval(images, texts, tau, opts).map(|e| e.value)
}

/// Per-pair similarity maximization `Σ_i (1 − v_i·t_i) / τ`, without negatives.
pub fn direct_similarity_eval(
    images: &[EmbeddingVec],
    texts: &[EmbeddingVec],
    tau: f64,
    normalize: bool,
) -> Result<AlignmentEval> {
    check_pairs(images, texts, tau)?;
    let v = prepare(images, normalize);
    let t = prepare(texts, normalize);
    let mut value = 0.0;
    let mut grad_images = Vec::with_capacity(v.len());
    let mut grad_texts = Vec::with_capacity(v.len());
    for (vi, ti) in v.iter().zip(&t) {
        value += (1.0 - vi.0.dot(&ti.0)) / tau;
        let gv = &ti.0 * (-1.0 / tau);
        let gt = &vi.0 * (-1.0 / tau);
        grad_images.push(unnormalize_grad(&gv, &vi.0, vi.1, normalize));
        grad_texts.push(unnormalize_grad(&gt, &ti.0, ti.1, normalize));
    }
    Ok(AlignmentEval {
        value,
        grad_images,
        grad_texts,
    })
}

/// Backend-defined perceptual distance between two frames of equal size.
pub fn perceptual_loss(a: &ImageTensor, b: &ImageTensor, backend: &dyn PerceptualBackend) -> Result<f64> {
    if a.resolution() != b.resolution() {
        return Err(Error::Shape(format!(
            "perceptual loss: {:?} vs {:?}",
            a.resolution(),
            b.resolution()
        )));
    }
    backend.distance(a, b)
}

/// The four loss terms, unweighted.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub w_reg: f64,
    pub path_reg: f64,
    pub cont: f64,
    pub lpips: f64,
}

/// `λ_w·L_w + λ_path·L_path + λ_cont·L_cont + λ_lpips·L_lpips`.
pub fn total_loss(parts: &LossParts, w: &LossWeights) -> Result<f64> {
    for (name, v) in [
        ("w_reg", parts.w_reg),
        ("path_reg", parts.path_reg),
        ("cont", parts.cont),
        ("lpips", parts.lpips),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss term `{name}` = {v}")));
        }
    }
    Ok(w.w_reg * parts.w_reg
        + w.path_reg * parts.path_reg
        + w.cont * parts.cont
        + w.lpips * parts.lpips)
}
