//! Inference: single-prompt animation and multi-prompt chaining, with PNG
//! frame export and a JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::Backends;
use crate::error::{Error, Result};
use crate::export::{contact_sheet, frame_name, read_png, write_png};
use crate::metrics::write_atomic;
use crate::motion::{sample_hidden, MotionState, TrajectoryConfig};
use crate::pipeline::{content_anchor, first_code, trajectory, Model};
use crate::train::Checkpoint;
use crate::types::{ImageSource, ImageTensor, WPlusCode};

pub const MANIFEST_NAME: &str = "manifest.json";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceSpec {
    Image(PathBuf),
    SampleSeed(u64),
}

/// Everything needed to (re)generate an animation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnimationRequest {
    pub source: SourceSpec,
    pub prompts: Vec<String>,
    pub frames_per_prompt: usize,
    pub checkpoint: PathBuf,
    pub out_dir: PathBuf,
    /// Seed of the initial hidden state.
    pub seed: u64,
    #[serde(default)]
    pub contact_sheet: bool,
}

impl AnimationRequest {
    pub fn validate(&self) -> Result<()> {
        if self.prompts.is_empty() {
            return Err(Error::InvalidArgument("at least one prompt is required".into()));
        }
        if self.frames_per_prompt == 0 {
            return Err(Error::InvalidArgument("frames_per_prompt must be >= 1".into()));
        }
        Ok(())
    }

    pub fn total_frames(&self) -> usize {
        self.prompts.len() * self.frames_per_prompt
    }
}

/// Generated frames with their codes and segment layout.
#[derive(Debug, Clone)]
pub struct Animation {
    pub frames: Vec<ImageTensor>,
    pub codes: Vec<WPlusCode>,
    /// Prompt index of every frame.
    pub segment_of: Vec<usize>,
    /// `‖w^(i) − w^(i−1)‖`, zero for the first frame.
    pub displacement_norms: Vec<f64>,
}

/// Generates `prompts.len() · frames_per_prompt` frames.
///
/// Segment `j ≥ 1` keeps the hidden state of segment `j − 1`, starts its
/// motion code from prompt `j`, and re-anchors its content so that its first
/// frame coincides with the previous segment's last frame. Residual scales
/// decay over the full chained length.
pub fn generate(
    model: &Model,
    backends: &Backends,
    source: &ImageSource,
    prompts: &[String],
    frames_per_prompt: usize,
    seed: u64,
) -> Result<Animation> {
    if prompts.is_empty() || frames_per_prompt == 0 {
        return Err(Error::InvalidArgument("need >= 1 prompt and >= 1 frame".into()));
    }
    let total = prompts.len() * frames_per_prompt;
    let traj_cfg = TrajectoryConfig::infer(frames_per_prompt, total);
    let mut anchor = content_anchor(model, backends, source)?;
    let mut hidden = sample_hidden(model.recurrent.h_dim(), seed);
    let mut codes: Vec<WPlusCode> = Vec::with_capacity(total);
    let mut segment_of = Vec::with_capacity(total);
    for (j, prompt) in prompts.iter().enumerate() {
        let (z, _) = first_code(model, backends, prompt, &anchor)?;
        let init = MotionState { z, h: hidden.clone() };
        let traj = trajectory(model, &init, &anchor.w_s, &traj_cfg)?;
        let mut segment = traj.codes.into_iter().next().expect("one trajectory");
        if let Some(prev) = codes.last() {
            // Shift the segment so its first code equals the previous last code.
            let shift = &prev.0 - &segment[0].0;
            for c in &mut segment {
                c.0 += &shift;
            }
            anchor.w_s = WPlusCode(&anchor.w_s.0 + &shift);
        }
        hidden = traj.rollout.final_state(0).h;
        codes.extend(segment);
        segment_of.extend(std::iter::repeat_n(j, frames_per_prompt));
    }
    let frames = codes
        .par_iter()
        .map(|w| backends.synthesizer.synthesize(w))
        .collect::<Result<Vec<_>>>()?;
    let mut displacement_norms = vec![0.0];
    displacement_norms.extend(codes.windows(2).map(|p| (&p[1].0 - &p[0].0).mapv(|v| v * v).sum().sqrt()));
    Ok(Animation {
        frames,
        codes,
        segment_of,
        displacement_norms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: usize,
    pub file: String,
    pub prompt: String,
    pub displacement_norm: f64,
}

/// Structured record written next to the frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub request: AnimationRequest,
    pub config_hash: String,
    pub checkpoint_iteration: usize,
    pub synthesizer_checksum: String,
    pub frames: Vec<FrameRecord>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Serde(format!("unsupported manifest schema {}", m.schema_version)));
        }
        Ok(m)
    }
}

pub fn resolve_source(spec: &SourceSpec) -> Result<ImageSource> {
    match spec {
        SourceSpec::SampleSeed(seed) => Ok(ImageSource::Sampled { seed: *seed }),
        SourceSpec::Image(p) => Ok(ImageSource::Image(read_png(p)?)),
    }
}

/// Loads the checkpoint, generates and writes frames, then the manifest.
pub fn animate(req: &AnimationRequest, backends: &Backends) -> Result<Manifest> {
    req.validate()?;
    if !req.checkpoint.is_file() {
        return Err(Error::Checkpoint(format!("checkpoint {} not found", req.checkpoint.display())));
    }
    let ckpt = Checkpoint::load(&req.checkpoint)?;
    let checksum = backends.synthesizer.parameter_checksum();
    if checksum != ckpt.synthesizer_checksum {
        return Err(Error::Checkpoint(
            "checkpoint was trained against a different synthesizer".into(),
        ));
    }
    let source = resolve_source(&req.source)?;
    let anim = generate(&ckpt.model, backends, &source, &req.prompts, req.frames_per_prompt, req.seed)?;
    fs::create_dir_all(&req.out_dir)
        .map_err(|e| Error::io(format!("creating {}", req.out_dir.display()), e))?;
    anim.frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| write_png(&req.out_dir.join(frame_name(i + 1)), f))
        .collect::<Result<Vec<_>>>()?;
    if req.contact_sheet {
        let sheet = contact_sheet(&anim.frames, req.frames_per_prompt.min(8))?;
        write_png(&req.out_dir.join("contact_sheet.png"), &sheet)?;
    }
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        request: req.clone(),
        config_hash: ckpt.config_hash(),
        checkpoint_iteration: ckpt.iteration,
        synthesizer_checksum: checksum,
        frames: anim
            .segment_of
            .iter()
            .enumerate()
            .map(|(i, &s)| FrameRecord {
                index: i + 1,
                file: frame_name(i + 1),
                prompt: req.prompts[s].clone(),
                displacement_norm: anim.displacement_norms[i],
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Serde(e.to_string()))?;
    write_atomic(&req.out_dir.join(MANIFEST_NAME), json.as_bytes())?;
    Ok(manifest)
}
