//! Training loop: non-repeating prompt batches, full forward and backward
//! pass through rollout, mappers and frozen synthesizer, Adam updates and
//! checkpointing.

pub mod adam;
pub mod checkpoint;

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::Backends;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::loss::{
    contrastive_eval, direct_similarity_eval, path_reg_grad, path_reg_loss, total_loss, w_reg_grad,
    w_reg_loss, AlignmentEval, AlignmentObjective, ContrastiveOptions, LossParts, PathRegOrder,
};
use crate::mapper::Mapper;
use crate::motion::{sample_hidden, MotionState, RecurrentWeights, TrajectoryConfig, HIDDEN_DIM};
use crate::pipeline::{first_code, group_of, image_anchor, prepare_image, stack_rows, trajectories, Anchor, Model, TextTable, Trajectory};
use crate::types::{EmbeddingVec, ImageSource, ImageTensor, InputPair, PipelineMode, WPlusCode};

pub use adam::{clip_global_norm, global_norm, Adam, GroupRates, ParamGroup};
pub use checkpoint::Checkpoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Pairs per batch; their prompts are pairwise distinct.
    pub batch_size: usize,
    /// Frames per training video.
    pub frames: usize,
    pub iterations: usize,
    pub lr_encoders: f64,
    pub lr_mappers: f64,
    pub lr_recurrent: f64,
    pub adam_betas: [f64; 2],
    pub adam_eps: f64,
    /// Global gradient-norm ceiling.
    pub grad_clip: f64,
    pub seed: u64,
    pub mode: PipelineMode,
    /// Directory of training images for real-image mode.
    pub image_dir: Option<PathBuf>,
    pub checkpoint_every: usize,
    /// Width of the recurrent hidden state.
    pub hidden_dim: usize,
    pub path_reg_order: PathRegOrder,
    pub alignment: AlignmentObjective,
    pub contrastive_normalize: bool,
    pub contrastive_symmetric: bool,
    pub finetune_text_encoder: bool,
    /// Use the fine-tuned text table on the loss side too.
    pub share_loss_encoder: bool,
    /// Run batch items on the rayon pool. Results are identical either way.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            frames: 16,
            iterations: 2000,
            lr_encoders: 1e-5,
            lr_mappers: 1e-3,
            lr_recurrent: 1e-3,
            adam_betas: [0.0, 0.999],
            adam_eps: 1e-8,
            grad_clip: 10.0,
            seed: 0,
            mode: PipelineMode::Sampled,
            image_dir: None,
            checkpoint_every: 500,
            hidden_dim: HIDDEN_DIM,
            path_reg_order: PathRegOrder::Second,
            alignment: AlignmentObjective::Contrastive,
            contrastive_normalize: true,
            contrastive_symmetric: false,
            finetune_text_encoder: false,
            share_loss_encoder: false,
            parallel: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("train.batch_size", self.batch_size),
            ("train.frames", self.frames),
            ("train.hidden_dim", self.hidden_dim),
            ("train.checkpoint_every", self.checkpoint_every),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be >= 1"));
            }
        }
        for (key, v) in [
            ("train.lr_encoders", self.lr_encoders),
            ("train.lr_mappers", self.lr_mappers),
            ("train.lr_recurrent", self.lr_recurrent),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(key, format!("must be finite and >= 0, got {v}")));
            }
        }
        let [b1, b2] = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::config("train.adam_betas", "both betas must lie in [0, 1)"));
        }
        if !(self.adam_eps >= 0.0 && self.adam_eps.is_finite()) {
            return Err(Error::config("train.adam_eps", "must be finite and >= 0"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::config("train.grad_clip", "must be > 0"));
        }
        if self.share_loss_encoder && !self.finetune_text_encoder {
            return Err(Error::config(
                "train.share_loss_encoder",
                "sharing needs finetune_text_encoder = true",
            ));
        }
        Ok(())
    }

    pub fn rates(&self) -> GroupRates {
        GroupRates {
            encoders: self.lr_encoders,
            mappers: self.lr_mappers,
            recurrent: self.lr_recurrent,
        }
    }

    fn contrastive_options(&self) -> ContrastiveOptions {
        ContrastiveOptions {
            normalize: self.contrastive_normalize,
            symmetric: self.contrastive_symmetric,
        }
    }
}

/// Where a batch item's content comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContentDraw {
    Seed(u64),
    /// Index into the training image set.
    Image(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchItem {
    pub prompt: usize,
    pub content: ContentDraw,
    /// Seed of the initial hidden state.
    pub hidden_seed: u64,
}

/// Draws `n` items with pairwise-distinct prompts. Content comes from
/// `num_images` training images when given, otherwise from fresh seeds.
pub fn sample_batch(
    num_prompts: usize,
    n: usize,
    num_images: Option<usize>,
    rng: &mut impl Rng,
) -> Result<Vec<BatchItem>> {
    if n == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    if num_prompts < n {
        return Err(Error::InvalidArgument(format!(
            "vocabulary of {num_prompts} prompts cannot fill a batch of {n} distinct prompts"
        )));
    }
    if num_images == Some(0) {
        return Err(Error::InvalidArgument("training image set is empty".into()));
    }
    let prompts = index::sample(rng, num_prompts, n).into_vec();
    Ok(prompts
        .into_iter()
        .map(|prompt| {
            let content = match num_images {
                Some(m) => ContentDraw::Image(rng.random_range(0..m)),
                None => ContentDraw::Seed(rng.next_u64()),
            };
            BatchItem {
                prompt,
                content,
                hidden_seed: rng.next_u64(),
            }
        })
        .collect())
}

/// Loss terms of one step (already summed over the batch) and the
/// gradient norm before clipping.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub w_reg: f64,
    pub path_reg: f64,
    pub cont: f64,
    pub lpips: f64,
    pub grad_norm: f64,
}

/// Frames, codes, anchors and last-frame embeddings of a batch.
pub struct ForwardOutput {
    pub frames: Vec<Vec<ImageTensor>>,
    pub codes: Vec<Vec<WPlusCode>>,
    pub anchors: Vec<WPlusCode>,
    pub last_frame_embeddings: Vec<EmbeddingVec>,
}

struct PreparedImage {
    w_inv: WPlusCode,
    z_v: EmbeddingVec,
}

struct ItemForward {
    prompt: usize,
    text_row: Option<usize>,
    anchor: Anchor,
    codes: Vec<WPlusCode>,
    frames: Vec<ImageTensor>,
    reference: ImageTensor,
    last_embedding: EmbeddingVec,
}

/// Per-item parameter gradients, summed into the model gradient in batch order.
struct CodeGrads {
    codes: Array2<f64>,
    anchor: Option<Array2<f64>>,
}

struct ItemGrads {
    visual_mapper: Option<Mapper>,
    text: Vec<(usize, Array1<f64>)>,
}

/// Training state: configuration, backends, model and optimizer.
pub struct Trainer {
    pub config: Config,
    pub backends: Backends,
    pub model: Model,
    pub optimizer: Adam,
    /// Completed iterations.
    pub iteration: usize,
    prompts: Vec<String>,
    frozen_text: Vec<EmbeddingVec>,
    images: Vec<PreparedImage>,
}

impl Trainer {
    pub fn new(config: Config, backends: Backends) -> Result<Self> {
        config.validate()?;
        let model = Model::init(&config, &backends)?;
        Self::assemble(config, backends, model, None, 0)
    }

    /// Rebuilds a trainer from a checkpoint; the synthesizer must be unchanged.
    pub fn from_checkpoint(ckpt: Checkpoint, backends: Backends) -> Result<Self> {
        let checksum = backends.synthesizer.parameter_checksum();
        if checksum != ckpt.synthesizer_checksum {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained against synthesizer {}, loaded synthesizer is {checksum}",
                ckpt.synthesizer_checksum
            )));
        }
        Self::assemble(ckpt.config, backends, ckpt.model, Some(ckpt.optimizer), ckpt.iteration)
    }

    fn assemble(
        config: Config,
        backends: Backends,
        model: Model,
        optimizer: Option<Adam>,
        iteration: usize,
    ) -> Result<Self> {
        let prompts = backends.encoder.vocabulary();
        if prompts.is_empty() {
            return Err(Error::Contract("training needs an encoder with a prompt vocabulary".into()));
        }
        let frozen_text = prompts
            .iter()
            .map(|p| backends.encoder.encode_text(p))
            .collect::<Result<Vec<_>>>()?;
        let [b1, b2] = config.train.adam_betas;
        let optimizer = optimizer.unwrap_or_else(|| Adam::new(&model, b1, b2, config.train.adam_eps));
        let mut trainer = Self {
            config,
            backends,
            model,
            optimizer,
            iteration,
            prompts,
            frozen_text,
            images: Vec::new(),
        };
        if trainer.config.train.mode == PipelineMode::RealImage {
            if let Some(dir) = trainer.config.train.image_dir.clone() {
                let imgs = crate::export::read_image_dir(&dir)?;
                trainer.set_images(&imgs)?;
            }
        }
        Ok(trainer)
    }

    /// Replaces the real-image training set; each image is inverted and
    /// encoded once.
    pub fn set_images(&mut self, images: &[ImageTensor]) -> Result<()> {
        self.images = images
            .iter()
            .map(|img| prepare_image(&self.backends, img).map(|(w_inv, z_v)| PreparedImage { w_inv, z_v }))
            .collect::<Result<_>>()?;
        Ok(())
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    fn num_images(&self) -> Result<Option<usize>> {
        match self.config.train.mode {
            PipelineMode::Sampled => Ok(None),
            PipelineMode::RealImage if self.images.is_empty() => Err(Error::config(
                "train.image_dir",
                "real-image mode needs training images",
            )),
            PipelineMode::RealImage => Ok(Some(self.images.len())),
        }
    }

    /// The batch used at iteration `iteration` (0-based). Each iteration has
    /// its own random stream so runs can resume anywhere.
    pub fn batch_at(&self, iteration: usize) -> Result<Vec<BatchItem>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.train.seed);
        rng.set_stream(iteration as u64);
        sample_batch(self.prompts.len(), self.config.train.batch_size, self.num_images()?, &mut rng)
    }

    /// Public view of a batch as source/prompt pairs.
    pub fn pairs(&self, batch: &[BatchItem]) -> Vec<InputPair> {
        batch
            .iter()
            .map(|b| InputPair {
                source: match b.content {
                    ContentDraw::Seed(seed) => ImageSource::Sampled { seed },
                    ContentDraw::Image(i) => ImageSource::Image(
                        self.backends
                            .synthesizer
                            .synthesize(&self.images[i].w_inv)
                            .unwrap_or_else(|_| ImageTensor::filled(1, 1, 0.0)),
                    ),
                },
                text: self.prompts[b.prompt].clone(),
            })
            .collect()
    }

    fn start_item(&self, item: &BatchItem) -> Result<(Anchor, MotionState, Option<usize>)> {
        let anchor = match item.content {
            ContentDraw::Seed(seed) => Anchor {
                w_s: self.backends.synthesizer.sample_content_code(seed),
                z_v: None,
                visual_trace: None,
            },
            ContentDraw::Image(i) => {
                let img = self
                    .images
                    .get(i)
                    .ok_or_else(|| Error::InvalidArgument(format!("training image {i} missing")))?;
                image_anchor(&self.model, &img.w_inv, &img.z_v)?
            }
        };
        let prompt = &self.prompts[item.prompt];
        let (z, text_row) = first_code(&self.model, &self.backends, prompt, &anchor)?;
        let init = MotionState {
            z,
            h: sample_hidden(self.model.recurrent.h_dim(), item.hidden_seed),
        };
        Ok((anchor, init, text_row))
    }

    fn finish_item(&self, prompt: usize, text_row: Option<usize>, anchor: Anchor, codes: Vec<WPlusCode>) -> Result<ItemForward> {
        let synth = &self.backends.synthesizer;
        let frames = codes.iter().map(|w| synth.synthesize(w)).collect::<Result<Vec<_>>>()?;
        let reference = synth.synthesize(&anchor.w_s)?;
        let last_embedding = self.backends.encoder.encode_image(frames.last().expect("frames >= 1"))?;
        Ok(ItemForward {
            prompt,
            text_row,
            anchor,
            codes,
            frames,
            reference,
            last_embedding,
        })
    }

    fn map_items<T: Send, U: Send>(&self, xs: Vec<T>, f: impl Fn(usize, T) -> Result<U> + Sync + Send) -> Result<Vec<U>> {
        if self.config.train.parallel {
            xs.into_par_iter().enumerate().map(|(k, x)| f(k, x)).collect()
        } else {
            xs.into_iter().enumerate().map(|(k, x)| f(k, x)).collect()
        }
    }

    /// Forward pass of a batch: all rollouts advance together, then every
    /// item is synthesized and embedded.
    fn forward_batch(&self, batch: &[BatchItem]) -> Result<(Vec<ItemForward>, Trajectory)> {
        let starts = self.map_items(batch.to_vec(), |_, b| self.start_item(&b))?;
        let inits: Vec<MotionState> = starts.iter().map(|(_, init, _)| init.clone()).collect();
        let contents: Vec<&WPlusCode> = starts.iter().map(|(a, _, _)| &a.w_s).collect();
        let mut traj = trajectories(&self.model, &inits, &contents, &TrajectoryConfig::train(self.config.train.frames))?;
        let codes = std::mem::take(&mut traj.codes);
        let parts: Vec<_> = starts.into_iter().zip(codes).collect();
        let items = self.map_items(parts, |k, ((anchor, _, text_row), codes)| {
            self.finish_item(batch[k].prompt, text_row, anchor, codes)
        })?;
        Ok((items, traj))
    }

    /// Runs the batch through the pipeline without touching parameters.
    pub fn forward_pass(&self, batch: &[BatchItem]) -> Result<ForwardOutput> {
        let (items, _) = self.forward_batch(batch)?;
        let mut out = ForwardOutput {
            frames: Vec::new(),
            codes: Vec::new(),
            anchors: Vec::new(),
            last_frame_embeddings: Vec::new(),
        };
        for it in items {
            out.last_frame_embeddings.push(it.last_embedding);
            out.anchors.push(it.anchor.w_s);
            out.codes.push(it.codes);
            out.frames.push(it.frames);
        }
        Ok(out)
    }

    fn loss_text(&self, prompt: usize, row: Option<usize>) -> EmbeddingVec {
        match (&self.model.text_table, row, self.config.train.share_loss_encoder) {
            (Some(t), Some(r), true) => EmbeddingVec(t.table.row(r).to_owned()),
            _ => self.frozen_text[prompt].clone(),
        }
    }

    fn alignment(&self, items: &[ItemForward]) -> Result<AlignmentEval> {
        let v: Vec<EmbeddingVec> = items.iter().map(|i| i.last_embedding.clone()).collect();
        let t: Vec<EmbeddingVec> = items.iter().map(|i| self.loss_text(i.prompt, i.text_row)).collect();
        let tau = self.config.loss.temperature;
        let train = &self.config.train;
        match train.alignment {
            AlignmentObjective::Contrastive => contrastive_eval(&v, &t, tau, train.contrastive_options()),
            AlignmentObjective::Direct => direct_similarity_eval(&v, &t, tau, train.contrastive_normalize),
        }
    }

    fn item_losses(&self, it: &ItemForward) -> Result<(f64, f64, f64)> {
        let order = self.config.train.path_reg_order;
        let w_reg = w_reg_loss(&it.codes, &it.anchor.w_s)?;
        let path = path_reg_loss(&it.codes, order)?;
        let mut lpips = 0.0;
        for f in &it.frames {
            lpips += crate::loss::perceptual_loss(f, &it.reference, self.backends.perceptual.as_ref())?;
        }
        Ok((w_reg, path, lpips))
    }

    /// Gradients w.r.t. every frame code (stacked T × L·D) and w.r.t. the
    /// content code when it is trainable.
    fn code_grads(&self, it: &ItemForward, g_image: &Array1<f64>) -> Result<CodeGrads> {
        let w = &self.config.loss;
        let synth = &self.backends.synthesizer;
        let codes = &it.codes;
        let t = codes.len();
        let trainable_anchor = it.anchor.visual_trace.is_some();

        let (reg, reg_anchor) = w_reg_grad(codes, &it.anchor.w_s)?;
        let path = path_reg_grad(codes, self.config.train.path_reg_order)?;
        let mut g_codes: Vec<Array2<f64>> = reg
            .into_iter()
            .zip(path)
            .map(|(r, p)| r * w.w_reg + p * w.path_reg)
            .collect();
        let mut g_anchor = reg_anchor * w.w_reg;

        if w.lpips > 0.0 {
            let mut g_ref_px = ndarray::Array3::<f64>::zeros(it.reference.0.dim());
            for (i, f) in it.frames.iter().enumerate() {
                let (_, g) = self.backends.perceptual.distance_grad(f, &it.reference)?;
                g_codes[i] += &(synth.synthesize_vjp(&codes[i], &g)? * w.lpips);
                if trainable_anchor {
                    let (_, gr) = self.backends.perceptual.distance_grad(&it.reference, f)?;
                    g_ref_px += &gr;
                }
            }
            if trainable_anchor {
                g_anchor += &(synth.synthesize_vjp(&it.anchor.w_s, &g_ref_px)? * w.lpips);
            }
        }

        if g_image.iter().any(|v| *v != 0.0) {
            let last = it.frames.last().expect("frames >= 1");
            let g_px = self.backends.encoder.encode_image_vjp(last, g_image)?;
            g_codes[t - 1] += &synth.synthesize_vjp(&codes[t - 1], &g_px)?;
        }

        let anchor = trainable_anchor.then(|| {
            // Every frame code contains w_s additively.
            for g in &g_codes {
                g_anchor += g;
            }
            g_anchor
        });
        Ok(CodeGrads {
            codes: stack_rows(&g_codes),
            anchor,
        })
    }

    /// Text-table rows and visual-mapper gradients of one item.
    fn item_tail(
        &self,
        it: &ItemForward,
        g_z_init: ArrayView1<'_, f64>,
        anchor: Option<&Array2<f64>>,
        g_text: &Array1<f64>,
    ) -> Result<ItemGrads> {
        let mut text = Vec::new();
        if let Some(row) = it.text_row {
            text.push((row, g_z_init.to_owned()));
            if self.config.train.share_loss_encoder {
                text.push((row, g_text.clone()));
            }
        }

        let visual_mapper = match (&self.model.visual_mapper, &it.anchor.visual_trace, anchor) {
            (Some(m), Some(trace), Some(g_anchor)) => {
                let flat = Array1::from_iter(g_anchor.iter().copied()).insert_axis(Axis(0));
                Some(m.backward_batch(trace, &flat)?.0)
            }
            _ => None,
        };

        Ok(ItemGrads { visual_mapper, text })
    }

    /// Loss terms on `batch` and the gradient of the weighted total with
    /// respect to every trainable tensor. Parameters are left untouched;
    /// `grad_norm` is the unclipped global norm.
    pub fn loss_and_gradients(&self, batch: &[BatchItem]) -> Result<(LossBreakdown, Model)> {
        let (items, traj) = self.forward_batch(batch)?;
        let weights = self.config.loss;
        let align = self.alignment(&items)?;

        let mut parts = LossParts {
            cont: align.value,
            ..Default::default()
        };
        for it in &items {
            let (a, b, c) = self.item_losses(it)?;
            parts.w_reg += a;
            parts.path_reg += b;
            parts.lpips += c;
        }
        let total = total_loss(&parts, &weights).map_err(|e| Error::Diverged {
            iteration: self.iteration + 1,
            term: e.to_string(),
            last_good: None,
        })?;

        let scaled = |g: &Array1<f64>| g * weights.cont;
        let code_grads = self.map_items(items.iter().collect(), |k, it| {
            self.code_grads(it, &scaled(&align.grad_images[k]))
        })?;

        // Items are stacked trajectory-major, matching the mapper trace.
        let views: Vec<_> = code_grads.iter().map(|c| c.codes.view()).collect();
        let g_rows = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
        let (motion_mapper, grad_z) = self.model.motion_mapper.backward_batch(&traj.mapper_trace, &g_rows)?;
        let rg = traj.rollout.backward(&self.model.recurrent, &grad_z)?;

        let item_grads = self.map_items(items.iter().collect(), |k, it| {
            self.item_tail(it, rg.z_init.row(k), code_grads[k].anchor.as_ref(), &scaled(&align.grad_texts[k]))
        })?;

        let mut grads = Model {
            recurrent: RecurrentWeights {
                w1: rg.w1,
                w2: rg.w2,
                w3: rg.w3,
                activation_slope: self.model.recurrent.activation_slope,
            },
            motion_mapper,
            visual_mapper: self.model.visual_mapper.as_ref().map(Mapper::zeros_like),
            text_table: self.model.text_table.as_ref().map(|t| TextTable {
                prompts: t.prompts.clone(),
                table: Array2::zeros(t.table.dim()),
            }),
        };
        for g in item_grads {
            if let (Some(dst), Some(src)) = (&mut grads.visual_mapper, &g.visual_mapper) {
                dst.add_scaled(src, 1.0);
            }
            if let Some(table) = &mut grads.text_table {
                for (row, v) in &g.text {
                    let mut r = table.table.row_mut(*row);
                    r += v;
                }
            }
        }
        let losses = LossBreakdown {
            total,
            w_reg: parts.w_reg,
            path_reg: parts.path_reg,
            cont: parts.cont,
            lpips: parts.lpips,
            grad_norm: global_norm(&grads),
        };
        Ok((losses, grads))
    }

    /// One optimizer update on `batch`.
    pub fn train_step(&mut self, batch: &[BatchItem]) -> Result<LossBreakdown> {
        let (losses, mut grads) = self.loss_and_gradients(batch)?;
        let grad_norm = clip_global_norm(&mut grads, self.config.train.grad_clip);
        if !grad_norm.is_finite() {
            return Err(Error::Diverged {
                iteration: self.iteration + 1,
                term: "gradient norm".into(),
                last_good: None,
            });
        }
        let rates = self.config.train.rates();
        self.optimizer
            .update(&mut self.model, &grads, |name| rates.of(group_of(name)))?;
        self.iteration += 1;
        Ok(LossBreakdown { grad_norm, ..losses })
    }

    /// Runs the next iteration's batch.
    pub fn step(&mut self) -> Result<LossBreakdown> {
        let batch = self.batch_at(self.iteration)?;
        self.train_step(&batch)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            iteration: self.iteration,
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
            synthesizer_checksum: self.backends.synthesizer.parameter_checksum(),
        }
    }
}

/// Periodic checkpointing and progress reporting for [`fit`].
#[derive(Default)]
pub struct FitOptions<'a> {
    /// Directory for `checkpoint_XXXXXX.bin` and `final.bin`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Called after every iteration with its 1-based index and losses.
    pub on_step: Option<&'a mut dyn FnMut(usize, &LossBreakdown)>,
}

pub struct FitOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<LossBreakdown>,
    pub written: Vec<PathBuf>,
}

/// Trains until `config.train.iterations` iterations have completed,
/// continuing from the trainer's current iteration.
pub fn fit(trainer: &mut Trainer, mut opts: FitOptions<'_>) -> Result<FitOutcome> {
    let target = trainer.config.train.iterations;
    let every = trainer.config.train.checkpoint_every;
    let mut history = Vec::new();
    let mut written = Vec::new();
    let mut last_good: Option<PathBuf> = None;
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    while trainer.iteration < target {
        let losses = match trainer.step() {
            Ok(l) => l,
            Err(Error::Diverged { iteration, term, .. }) => {
                return Err(Error::Diverged {
                    iteration,
                    term,
                    last_good,
                })
            }
            Err(e) => return Err(e),
        };
        if let Some(cb) = opts.on_step.as_mut() {
            cb(trainer.iteration, &losses);
        }
        history.push(losses);
        if let Some(dir) = &opts.checkpoint_dir {
            if trainer.iteration % every == 0 && trainer.iteration < target {
                let path = checkpoint_path(dir, trainer.iteration);
                trainer.checkpoint().save(&path)?;
                written.push(path.clone());
                last_good = Some(path);
            }
        }
    }
    let checkpoint = trainer.checkpoint();
    if let Some(dir) = &opts.checkpoint_dir {
        let path = dir.join("final.bin");
        checkpoint.save(&path)?;
        written.push(path);
    }
    Ok(FitOutcome {
        checkpoint,
        history,
        written,
    })
}

pub fn checkpoint_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(format!("checkpoint_{iteration:06}.bin"))
}
