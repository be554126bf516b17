//! Shared value types: layered style codes, joint-space embeddings, images.

use ndarray::{Array1, Array2, Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of one style layer and of the joint embedding space.
pub const STYLE_DIM: usize = 512;
/// Joint-space embedding width.
pub const EMBED_DIM: usize = 512;

/// A point in the layered style space: one `STYLE_DIM` vector per synthesis layer.
#[derive(Debug, Clone, PartialEq)]
pub struct WPlusCode(pub Array2<f64>);

impl WPlusCode {
    pub fn zeros(num_layers: usize, dim: usize) -> Self {
        Self(Array2::zeros((num_layers, dim)))
    }

    pub fn from_array(data: Array2<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("style code".into()));
        }
        Ok(Self(data))
    }

    pub fn num_layers(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    /// Squared Frobenius norm over all layers.
    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    fn check_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "code subtraction")?;
        Ok(Self(&self.0 - &other.0))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(&self.0 * factor)
    }
}

/// Elementwise sum of two codes of equal shape.
pub fn code_add(a: &WPlusCode, b: &WPlusCode) -> Result<WPlusCode> {
    a.check_same_shape(b, "code addition")?;
    Ok(WPlusCode(&a.0 + &b.0))
}

/// Consecutive differences `seq[i+1] - seq[i]`; needs at least two codes.
pub fn sequence_deltas(seq: &[WPlusCode]) -> Result<Vec<WPlusCode>> {
    if seq.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "sequence_deltas needs at least 2 codes, got {}",
            seq.len()
        )));
    }
    seq.windows(2).map(|w| w[1].try_sub(&w[0])).collect()
}

/// A vector in the joint image/text embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVec(pub Array1<f64>);

impl EmbeddingVec {
    pub fn zeros(dim: usize) -> Self {
        Self(Array1::zeros(dim))
    }

    /// Unit vector along `axis`.
    pub fn basis(dim: usize, axis: usize) -> Self {
        let mut v = Array1::zeros(dim);
        v[axis] = 1.0;
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.dot(&self.0).sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.dot(&other.0)
    }

    /// Unit-norm copy; the zero vector is returned unchanged.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            return self.clone();
        }
        Self(&self.0 / n)
    }

    pub fn cosine(&self, other: &Self) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            self.dot(other) / denom
        }
    }

    pub fn try_add(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "embedding addition: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(Self(&self.0 + &other.0))
    }
}

/// An RGB image stored height × width × 3 with values in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor(pub Array3<f64>);

impl ImageTensor {
    /// Wraps `data`, clamping every value into [-1, 1].
    pub fn new(mut data: Array3<f64>) -> Result<Self> {
        if data.dim().2 != 3 {
            return Err(Error::Shape(format!(
                "image must have 3 channels, got {}",
                data.dim().2
            )));
        }
        if data.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("image".into()));
        }
        data.mapv_inplace(|v| v.clamp(-1.0, 1.0));
        Ok(Self(data))
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self(Array3::from_elem((height, width, 3), value.clamp(-1.0, 1.0)))
    }

    pub fn height(&self) -> usize {
        self.0.dim().0
    }

    pub fn width(&self) -> usize {
        self.0.dim().1
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    /// Linear map [-1, 1] → [0, 255], row-major RGB bytes.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.0
            .iter()
            .map(|&v| (((v.clamp(-1.0, 1.0) + 1.0) * 0.5) * 255.0).round() as u8)
            .collect()
    }

    /// Inverse of [`ImageTensor::to_rgb8`].
    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "expected {} bytes for {height}x{width} RGB, got {}",
                height * width * 3,
                bytes.len()
            )));
        }
        let data = Array3::from_shape_fn((height, width, 3), |(y, x, c)| {
            f64::from(bytes[(y * width + x) * 3 + c]) / 255.0 * 2.0 - 1.0
        });
        Ok(Self(data))
    }

    /// Mean absolute pixel difference; handy for quick comparisons.
    pub fn mean_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.0.dim() != other.0.dim() {
            return Err(Error::Shape("image comparison".into()));
        }
        let mut acc = 0.0;
        Zip::from(&self.0)
            .and(&other.0)
            .for_each(|a, b| acc += (a - b).abs());
        Ok(acc / self.0.len() as f64)
    }
}

/// Where the content of an animation comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ImageSource {
    Image(ImageTensor),
    Sampled { seed: u64 },
}

/// A source (image or sampled content) paired with a prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct InputPair {
    pub source: ImageSource,
    pub text: String,
}

/// Which content pipeline is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    /// Real images are inverted and passed through the visual encoder and mapper.
    RealImage,
    /// Content codes are drawn from the synthesizer's own latent distribution.
    #[default]
    Sampled,
}
