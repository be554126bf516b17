//! Directory-level evaluation: FID between two frame sets and ACD over
//! videos stored as `<dir>/<video_id>/frame_*.png`.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::EncoderBackend;
use crate::error::{Error, Result};
use crate::export::{image_files, read_png};
use crate::metrics::{acd, content_key, fid, gaussian_stats, FeatureCache};
use crate::types::ImageTensor;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Fid,
    Acd,
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fid" => Ok(Self::Fid),
            "acd" => Ok(Self::Acd),
            other => Err(Error::InvalidArgument(format!("unknown metric {other:?} (expected fid or acd)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub fid: Option<f64>,
    /// Whether `fid` is the square root of the Fréchet distance.
    pub fid_outer_sqrt: bool,
    pub acd: Option<f64>,
    pub n_videos: usize,
    pub n_frames: usize,
    pub n_reference_frames: usize,
    pub embedder: String,
}

/// Frames of one directory, grouped by video subdirectory.
#[derive(Debug)]
pub struct FrameSet {
    /// `(video id, frame paths)`; a flat directory yields one unnamed group.
    pub videos: Vec<(Option<String>, Vec<PathBuf>)>,
}

impl FrameSet {
    pub fn scan(dir: &Path) -> Result<Self> {
        let mut videos = Vec::new();
        let entries = fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
        let mut subdirs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        for sub in subdirs {
            let files = image_files(&sub)?;
            if !files.is_empty() {
                let id = sub.file_name().map(|n| n.to_string_lossy().into_owned());
                videos.push((id, files));
            }
        }
        let loose = image_files(dir)?;
        if !loose.is_empty() {
            videos.push((None, loose));
        }
        if videos.is_empty() {
            return Err(Error::InvalidArgument(format!("no frames found in {}", dir.display())));
        }
        Ok(Self { videos })
    }

    pub fn num_frames(&self) -> usize {
        self.videos.iter().map(|(_, f)| f.len()).sum()
    }

    fn grouped(&self) -> Result<Vec<&Vec<PathBuf>>> {
        if self.videos.iter().any(|(id, _)| id.is_none()) {
            return Err(Error::InvalidArgument(
                "ACD needs frames grouped into per-video subdirectories".into(),
            ));
        }
        Ok(self.videos.iter().map(|(_, f)| f).collect())
    }
}

/// Embeds frames through the encoder, reusing cached features when the
/// frame content matches.
pub struct Embedder<'a> {
    pub encoder: &'a dyn EncoderBackend,
    pub cache: Option<&'a mut FeatureCache>,
}

impl Embedder<'_> {
    fn embed_paths(&mut self, paths: &[PathBuf]) -> Result<Vec<Array1<f64>>> {
        let images: Vec<ImageTensor> = paths.par_iter().map(|p| read_png(p)).collect::<Result<_>>()?;
        let keys: Vec<[u8; 32]> = images
            .iter()
            .map(|img| {
                let (h, w) = img.resolution();
                let mut bytes = format!("{h}x{w}:").into_bytes();
                bytes.extend(img.to_rgb8());
                content_key(&bytes)
            })
            .collect();
        let cached: Vec<Option<Vec<f64>>> = keys
            .iter()
            .map(|k| self.cache.as_ref().and_then(|c| c.get(k).map(<[f64]>::to_vec)))
            .collect();
        let encoder = self.encoder;
        let features: Vec<Array1<f64>> = images
            .par_iter()
            .zip(cached)
            .map(|(img, hit)| match hit {
                Some(v) => Ok(Array1::from(v)),
                None => encoder.encode_image(img).map(|e| e.0),
            })
            .collect::<Result<_>>()?;
        if let Some(cache) = self.cache.as_mut() {
            for (k, f) in keys.into_iter().zip(&features) {
                if cache.get(&k).is_none() {
                    cache.insert(k, f.to_vec());
                }
            }
        }
        Ok(features)
    }
}

fn stack(rows: &[Array1<f64>]) -> Array2<f64> {
    let d = rows.first().map_or(0, |r| r.len());
    let mut m = Array2::zeros((rows.len(), d));
    for (i, r) in rows.iter().enumerate() {
        m.row_mut(i).assign(r);
    }
    m
}

/// Computes the requested metrics. FID needs `ref_dir`.
pub fn evaluate(
    gen_dir: &Path,
    ref_dir: Option<&Path>,
    metrics: &[MetricKind],
    mut embedder: Embedder<'_>,
    fid_outer_sqrt: bool,
) -> Result<EvaluationReport> {
    if metrics.is_empty() {
        return Err(Error::InvalidArgument("no metrics requested".into()));
    }
    let generated = FrameSet::scan(gen_dir)?;
    let mut report = EvaluationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        fid: None,
        fid_outer_sqrt,
        acd: None,
        n_videos: generated.videos.iter().filter(|(id, _)| id.is_some()).count(),
        n_frames: generated.num_frames(),
        n_reference_frames: 0,
        embedder: embedder.encoder.name(),
    };
    let mut per_video = Vec::with_capacity(generated.videos.len());
    for (_, paths) in &generated.videos {
        per_video.push(embedder.embed_paths(paths)?);
    }
    if metrics.contains(&MetricKind::Acd) {
        generated.grouped()?;
        report.acd = Some(acd(&per_video)?);
    }
    if metrics.contains(&MetricKind::Fid) {
        let ref_dir = ref_dir.ok_or_else(|| Error::InvalidArgument("FID needs a reference directory".into()))?;
        let reference = FrameSet::scan(ref_dir)?;
        let mut ref_feats = Vec::new();
        for (_, paths) in &reference.videos {
            ref_feats.extend(embedder.embed_paths(paths)?);
        }
        report.n_reference_frames = ref_feats.len();
        let gen_feats: Vec<Array1<f64>> = per_video.into_iter().flatten().collect();
        let x = gaussian_stats(&stack(&gen_feats))?;
        let y = gaussian_stats(&stack(&ref_feats))?;
        report.fid = Some(fid(&x, &y, fid_outer_sqrt)?);
    }
    if let Some(cache) = embedder.cache.as_mut() {
        cache.save()?;
    }
    Ok(report)
}
