//! Trainable model state and the shared generation path: content anchor,
//! motion rollout, motion mapping and frame codes.

use ndarray::{Array1, Array2, Axis};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::Backends;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::mapper::{Mapper, MapperTrace};
use crate::motion::{rollout_batch, MotionState, RecurrentWeights, RolloutTrace, TrajectoryConfig};
use crate::params::{slice_of, slice_of_mut, Parameters, TensorRef};
use crate::train::adam::ParamGroup;
use crate::types::{EmbeddingVec, ImageSource, ImageTensor, PipelineMode, WPlusCode};

/// Fine-tunable copy of the text encoder's outputs, one row per prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct TextTable {
    pub prompts: Vec<String>,
    /// (prompts × embedding width)
    pub table: Array2<f64>,
}

impl TextTable {
    pub fn row_of(&self, prompt: &str) -> Option<usize> {
        self.prompts.iter().position(|p| p == prompt)
    }
}

/// Architecture facts needed to rebuild a model from stored tensors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub embed_dim: usize,
    pub num_layers: usize,
    pub style_dim: usize,
    pub hidden_dim: usize,
    pub visual_mapper: bool,
    pub text_prompts: Option<Vec<String>>,
}

/// Every trainable tensor: recurrent generator, mappers and optional text table.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub recurrent: RecurrentWeights,
    pub motion_mapper: Mapper,
    pub visual_mapper: Option<Mapper>,
    pub text_table: Option<TextTable>,
}

impl Model {
    /// Fresh model for `config` on top of `backends`.
    pub fn init(config: &Config, backends: &Backends) -> Result<Self> {
        let mut seeds = ChaCha8Rng::seed_from_u64(config.train.seed);
        seeds.set_stream(u64::MAX);
        let embed = backends.encoder.embed_dim();
        let layers = backends.synthesizer.num_layers();
        let style = backends.synthesizer.style_dim();
        let h = config.train.hidden_dim;
        let recurrent = RecurrentWeights::init(embed, h, h, seeds.next_u64());
        let motion_mapper = Mapper::new(embed, layers, style, &config.mapper, seeds.next_u64())?;
        let visual_seed = seeds.next_u64();
        let visual_mapper = match config.train.mode {
            PipelineMode::RealImage => {
                Some(Mapper::new(embed, layers, style, &config.mapper, visual_seed)?)
            }
            PipelineMode::Sampled => None,
        };
        let text_table = if config.train.finetune_text_encoder {
            let prompts = backends.encoder.vocabulary();
            if prompts.is_empty() {
                return Err(Error::config(
                    "train.finetune_text_encoder",
                    "the encoder exposes no prompt vocabulary to fine-tune",
                ));
            }
            let mut table = Array2::zeros((prompts.len(), embed));
            for (r, p) in prompts.iter().enumerate() {
                table.row_mut(r).assign(&backends.encoder.encode_text(p)?.0);
            }
            Some(TextTable { prompts, table })
        } else {
            None
        };
        Ok(Self {
            recurrent,
            motion_mapper,
            visual_mapper,
            text_table,
        })
    }

    /// All-zero model with the given architecture.
    pub fn skeleton(config: &Config, shape: &ModelShape) -> Result<Self> {
        let h = shape.hidden_dim;
        let mapper =
            Mapper::new(shape.embed_dim, shape.num_layers, shape.style_dim, &config.mapper, 0)?.zeros_like();
        Ok(Self {
            recurrent: RecurrentWeights::zeros(shape.embed_dim, h, h),
            visual_mapper: shape.visual_mapper.then(|| mapper.clone()),
            motion_mapper: mapper,
            text_table: shape.text_prompts.as_ref().map(|p| TextTable {
                prompts: p.clone(),
                table: Array2::zeros((p.len(), shape.embed_dim)),
            }),
        })
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            embed_dim: self.recurrent.z_dim(),
            num_layers: self.motion_mapper.num_layers,
            style_dim: self.motion_mapper.style_dim,
            hidden_dim: self.recurrent.h_dim(),
            visual_mapper: self.visual_mapper.is_some(),
            text_prompts: self.text_table.as_ref().map(|t| t.prompts.clone()),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    /// Adds `other` tensor by tensor.
    pub fn accumulate(&mut self, other: &Model) {
        for ((_, dst), src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src.data).for_each(|(d, s)| *d += s);
        }
    }

    /// Motion-side text embedding and, when fine-tuned, its table row.
    pub fn motion_text(&self, backends: &Backends, prompt: &str) -> Result<(EmbeddingVec, Option<usize>)> {
        match &self.text_table {
            Some(t) => {
                let row = t.row_of(prompt).ok_or_else(|| Error::Vocabulary {
                    prompt: prompt.to_string(),
                    known: t.prompts.clone(),
                })?;
                Ok((EmbeddingVec(t.table.row(row).to_owned()), Some(row)))
            }
            None => Ok((backends.encoder.encode_text(prompt)?, None)),
        }
    }
}

/// Optimizer group of a tensor name produced by [`Model`]'s parameter listing.
pub fn group_of(name: &str) -> ParamGroup {
    if name.starts_with("text_encoder.") {
        ParamGroup::Encoders
    } else if name.starts_with("recurrent.") {
        ParamGroup::Recurrent
    } else {
        ParamGroup::Mappers
    }
}

fn prefixed<'a>(out: &mut Vec<TensorRef<'a>>, prefix: &str, list: Vec<TensorRef<'a>>) {
    for mut t in list {
        t.name = format!("{prefix}.{}", t.name);
        out.push(t);
    }
}

fn prefixed_mut<'a>(out: &mut Vec<(String, &'a mut [f64])>, prefix: &str, list: Vec<(String, &'a mut [f64])>) {
    for (n, t) in list {
        out.push((format!("{prefix}.{n}"), t));
    }
}

impl Parameters for Model {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        prefixed(&mut out, "recurrent", self.recurrent.tensors());
        prefixed(&mut out, "motion_mapper", self.motion_mapper.tensors());
        if let Some(m) = &self.visual_mapper {
            prefixed(&mut out, "visual_mapper", m.tensors());
        }
        if let Some(t) = &self.text_table {
            out.push(TensorRef {
                name: "text_encoder.table".into(),
                shape: t.table.shape().to_vec(),
                data: slice_of(&t.table),
            });
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        prefixed_mut(&mut out, "recurrent", self.recurrent.tensors_mut());
        prefixed_mut(&mut out, "motion_mapper", self.motion_mapper.tensors_mut());
        if let Some(m) = &mut self.visual_mapper {
            prefixed_mut(&mut out, "visual_mapper", m.tensors_mut());
        }
        if let Some(t) = &mut self.text_table {
            out.push(("text_encoder.table".into(), slice_of_mut(&mut t.table)));
        }
        out
    }
}

/// Content code `w_s` and what produced it.
pub struct Anchor {
    pub w_s: WPlusCode,
    /// Visual embedding added to the first motion code (real-image mode).
    pub z_v: Option<EmbeddingVec>,
    /// Trace of the visual mapper when `w_v` is part of `w_s`.
    pub visual_trace: Option<MapperTrace>,
}

/// Content anchor from an already inverted image.
pub fn image_anchor(model: &Model, w_inv: &WPlusCode, z_v: &EmbeddingVec) -> Result<Anchor> {
    match &model.visual_mapper {
        Some(m) => {
            let input = z_v.0.view().insert_axis(Axis(0)).to_owned();
            let (out, trace) = m.forward_batch(&input)?;
            let w_v = out
                .row(0)
                .to_owned()
                .into_shape_with_order(w_inv.shape())
                .map_err(|e| Error::Shape(e.to_string()))?;
            Ok(Anchor {
                w_s: WPlusCode(w_v + &w_inv.0),
                z_v: Some(z_v.clone()),
                visual_trace: Some(trace),
            })
        }
        // Without a visual mapper the inversion alone is the content.
        None => Ok(Anchor {
            w_s: w_inv.clone(),
            z_v: None,
            visual_trace: None,
        }),
    }
}

/// Inverts and encodes an image once.
pub fn prepare_image(backends: &Backends, img: &ImageTensor) -> Result<(WPlusCode, EmbeddingVec)> {
    Ok((backends.inverter.invert(img)?, backends.encoder.encode_image(img)?))
}

pub fn content_anchor(model: &Model, backends: &Backends, source: &ImageSource) -> Result<Anchor> {
    match source {
        ImageSource::Sampled { seed } => Ok(Anchor {
            w_s: backends.synthesizer.sample_content_code(*seed),
            z_v: None,
            visual_trace: None,
        }),
        ImageSource::Image(img) => {
            let (w_inv, z_v) = prepare_image(backends, img)?;
            image_anchor(model, &w_inv, &z_v)
        }
    }
}

/// Generated latent trajectories with everything backward needs.
pub struct Trajectory {
    pub rollout: RolloutTrace,
    /// Motion mapper trace over the rollout's stacked codes.
    pub mapper_trace: MapperTrace,
    /// Frame codes `w^(i) = Δw^(i) + w_s`, one list per trajectory.
    pub codes: Vec<Vec<WPlusCode>>,
}

/// Rolls out every initial state and maps the motion codes onto the
/// matching content codes.
pub fn trajectories(
    model: &Model,
    inits: &[MotionState],
    contents: &[&WPlusCode],
    cfg: &TrajectoryConfig,
) -> Result<Trajectory> {
    if inits.len() != contents.len() {
        return Err(Error::Shape(format!(
            "{} initial states for {} content codes",
            inits.len(),
            contents.len()
        )));
    }
    let rollout = rollout_batch(inits, &model.recurrent, cfg)?;
    let (deltas, mapper_trace) = model.motion_mapper.forward_batch(&rollout.stacked_codes())?;
    let frames = rollout.frames();
    let mut codes = Vec::with_capacity(contents.len());
    for (item, w_s) in contents.iter().enumerate() {
        if deltas.ncols() != w_s.0.len() {
            return Err(Error::Shape(format!(
                "motion mapper emits {} values, content code has {}",
                deltas.ncols(),
                w_s.0.len()
            )));
        }
        let item_codes = (0..frames)
            .map(|t| {
                let d = deltas
                    .row(item * frames + t)
                    .to_owned()
                    .into_shape_with_order(w_s.shape())
                    .expect("width checked above");
                let w = d + &w_s.0;
                if w.iter().all(|v| v.is_finite()) {
                    Ok(WPlusCode(w))
                } else {
                    Err(Error::NonFinite("frame code".into()))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        codes.push(item_codes);
    }
    Ok(Trajectory {
        rollout,
        mapper_trace,
        codes,
    })
}

/// Single-trajectory [`trajectories`].
pub fn trajectory(
    model: &Model,
    init: &MotionState,
    w_s: &WPlusCode,
    cfg: &TrajectoryConfig,
) -> Result<Trajectory> {
    trajectories(model, std::slice::from_ref(init), &[w_s], cfg)
}

/// First motion code `z_t (+ z_v)` for a prompt.
pub fn first_code(model: &Model, backends: &Backends, prompt: &str, anchor: &Anchor) -> Result<(EmbeddingVec, Option<usize>)> {
    let (z_t, row) = model.motion_text(backends, prompt)?;
    let z = match &anchor.z_v {
        Some(v) => z_t.try_add(v)?,
        None => z_t,
    };
    Ok((z, row))
}

/// Flattens per-frame code gradients into the mapper's (T × L·D) layout.
pub(crate) fn stack_rows(rows: &[Array2<f64>]) -> Array2<f64> {
    let width = rows.first().map_or(0, |r| r.len());
    let mut out = Array2::zeros((rows.len(), width));
    for (i, r) in rows.iter().enumerate() {
        out.row_mut(i)
            .assign(&Array1::from_iter(r.iter().copied()));
    }
    out
}
