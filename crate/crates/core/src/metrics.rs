//! Temporal consistency (ACD) and distribution distance (FID) over
//! pluggable per-frame embedders, plus a content-addressed feature cache.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Gaussian summary of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricStats {
    pub mu: Array1<f64>,
    pub sigma: Array2<f64>,
}

/// Average pairwise distance between frames of each video, averaged over
/// videos. `videos[n][i]` is the embedding of frame `i` of video `n`; videos
/// may differ in length.
pub fn acd(videos: &[Vec<Array1<f64>>]) -> Result<f64> {
    if videos.is_empty() {
        return Err(Error::InvalidArgument("ACD needs at least one video".into()));
    }
    let d = videos[0].first().map_or(0, |f| f.len());
    let mut total = 0.0;
    for (n, frames) in videos.iter().enumerate() {
        let t = frames.len();
        if t < 2 {
            return Err(Error::InvalidArgument(format!("ACD needs at least 2 frames, video {n} has {t}")));
        }
        let mut sum = 0.0;
        for (i, fi) in frames.iter().enumerate() {
            if fi.len() != d {
                return Err(Error::Shape(format!("video {n} frame {i} embedding width")));
            }
            for fj in &frames[i + 1..] {
                sum += (fj - fi).mapv(|v| v * v).sum().sqrt();
            }
        }
        total += 2.0 * sum / (t * (t - 1)) as f64;
    }
    Ok(total / videos.len() as f64)
}

/// Sample mean and unbiased covariance of the rows of `features`.
pub fn gaussian_stats(features: &Array2<f64>) -> Result<MetricStats> {
    let m = features.nrows();
    if m < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {m}")));
    }
    let mu = features.mean_axis(Axis(0)).expect("non-empty");
    let centered = features - &mu;
    let mut sigma = centered.t().dot(&centered) / (m as f64 - 1.0);
    symmetrize(&mut sigma);
    Ok(MetricStats { mu, sigma })
}

fn symmetrize(a: &mut Array2<f64>) {
    let t = a.t().to_owned();
    *a = (&*a + &t) * 0.5;
}

const SYMMETRY_TOL: f64 = 1e-6;
const CLAMP_REL: f64 = 1e-10;

/// Square root of a symmetric positive semi-definite matrix.
///
/// Eigenvalues below `1e-10 · λ_max` (including negative round-off) are
/// treated as zero.
pub fn psd_sqrt(a: &Array2<f64>) -> Result<Array2<f64>> {
    let (n, m) = a.dim();
    if n != m {
        return Err(Error::Shape(format!("psd_sqrt needs a square matrix, got {n}x{m}")));
    }
    let scale = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (a[[i, j]] - a[[j, i]]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::InvalidArgument(format!(
                    "matrix not symmetric at ({i}, {j}): {} vs {}",
                    a[[i, j]],
                    a[[j, i]]
                )));
            }
        }
    }
    let sym = DMatrix::from_fn(n, n, |i, j| 0.5 * (a[[i, j]] + a[[j, i]]));
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().fold(0.0f64, |acc, &v| acc.max(v));
    let floor = CLAMP_REL * max;
    let roots = eig
        .eigenvalues
        .map(|v| if v > floor { v.sqrt() } else { 0.0 });
    let q = &eig.eigenvectors;
    let s = q * DMatrix::from_diagonal(&roots) * q.transpose();
    let mut out = Array2::from_shape_fn((n, n), |(i, j)| s[(i, j)]);
    symmetrize(&mut out);
    Ok(out)
}

/// Fréchet distance between two Gaussians. With `outer_sqrt` the square
/// root of the usual quantity is returned.
pub fn fid(x: &MetricStats, y: &MetricStats, outer_sqrt: bool) -> Result<f64> {
    let d = x.mu.len();
    if y.mu.len() != d || x.sigma.dim() != (d, d) || y.sigma.dim() != (d, d) {
        return Err(Error::Shape(format!(
            "FID dimension mismatch: {} vs {}",
            d,
            y.mu.len()
        )));
    }
    if x == y {
        return Ok(0.0);
    }
    let diff = &x.mu - &y.mu;
    let root_x = psd_sqrt(&x.sigma)?;
    let mut inner = root_x.dot(&y.sigma).dot(&root_x);
    symmetrize(&mut inner);
    let cross = psd_sqrt(&inner)?;
    let trace = x.sigma.diag().sum() + y.sigma.diag().sum() - 2.0 * cross.diag().sum();
    let f = (diff.dot(&diff) + trace).max(0.0);
    Ok(if outer_sqrt { f.sqrt() } else { f })
}

const CACHE_MAGIC: &[u8; 8] = b"TAFEAT01";
const CACHE_VERSION: u32 = 1;

/// On-disk map from content hash to feature vector.
///
/// Layout: magic, format version (u32), embedder name (u32 length + UTF-8),
/// entry count (u64), then per entry a 32-byte key, a u32 width and the
/// little-endian `f64` values.
#[derive(Debug)]
pub struct FeatureCache {
    path: PathBuf,
    embedder: String,
    entries: HashMap<[u8; 32], Vec<f64>>,
    dirty: bool,
}

/// Hash of raw content used as a cache key.
pub fn content_key(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

impl FeatureCache {
    /// Opens a cache file, starting empty if it does not exist yet. A cache
    /// written by another embedder or format version is discarded.
    pub fn open(path: impl AsRef<Path>, embedder: &str) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut cache = Self {
            path: path.clone(),
            embedder: embedder.to_string(),
            entries: HashMap::new(),
            dirty: false,
        };
        let mut bytes = Vec::new();
        match fs::File::open(&path) {
            Ok(mut f) => {
                f.read_to_end(&mut bytes)
                    .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(cache),
            Err(e) => return Err(Error::io(format!("opening {}", path.display()), e)),
        }
        if let Some(entries) = decode_cache(&bytes, embedder)? {
            cache.entries = entries;
        }
        Ok(cache)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &[u8; 32]) -> Option<&[f64]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn insert(&mut self, key: [u8; 32], features: Vec<f64>) {
        self.entries.insert(key, features);
        self.dirty = true;
    }

    /// Writes the cache atomically if anything changed.
    pub fn save(&mut self) -> Result<()> {
        if !self.dirty {
            return Ok(());
        }
        let mut buf = Vec::new();
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.embedder.len() as u32).to_le_bytes());
        buf.extend_from_slice(self.embedder.as_bytes());
        buf.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        let mut keys: Vec<_> = self.entries.keys().collect();
        keys.sort();
        for k in keys {
            let v = &self.entries[k];
            buf.extend_from_slice(k);
            buf.extend_from_slice(&(v.len() as u32).to_le_bytes());
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        write_atomic(&self.path, &buf)?;
        self.dirty = false;
        Ok(())
    }
}

fn decode_cache(bytes: &[u8], embedder: &str) -> Result<Option<HashMap<[u8; 32], Vec<f64>>>> {
    let corrupt = || Error::Serde("feature cache is truncated or corrupt".into());
    let mut r = ByteReader { bytes, pos: 0 };
    if r.take(8).ok_or_else(corrupt)? != CACHE_MAGIC {
        return Err(Error::Serde("not a feature cache file".into()));
    }
    if r.u32().ok_or_else(corrupt)? != CACHE_VERSION {
        return Ok(None);
    }
    let name_len = r.u32().ok_or_else(corrupt)? as usize;
    if r.take(name_len).ok_or_else(corrupt)? != embedder.as_bytes() {
        return Ok(None);
    }
    let count = r.u64().ok_or_else(corrupt)?;
    let mut entries = HashMap::new();
    for _ in 0..count {
        let key: [u8; 32] = r.take(32).ok_or_else(corrupt)?.try_into().expect("32 bytes");
        let width = r.u32().ok_or_else(corrupt)? as usize;
        let mut v = Vec::with_capacity(width);
        for _ in 0..width {
            v.push(r.f64().ok_or_else(corrupt)?);
        }
        entries.insert(key, v);
    }
    Ok(Some(entries))
}

pub(crate) struct ByteReader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    pub fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    pub fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    pub fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

/// Writes `bytes` to a sibling temp file, syncs it and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let ctx = |what: &str| format!("{what} {}", tmp.display());
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(ctx("creating"), e))?;
    f.write_all(bytes).map_err(|e| Error::io(ctx("writing"), e))?;
    f.sync_all().map_err(|e| Error::io(ctx("syncing"), e))?;
    drop(f);
    fs::rename(&tmp, path)
        .map_err(|e| Error::io(format!("renaming into {}", path.display()), e))
}
