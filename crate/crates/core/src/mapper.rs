//! Mappers from the joint embedding space into the layered style space.

use std::ops::Range;

use ndarray::{s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{leaky_relu, leaky_relu_grad, ACTIVATION_SLOPE};
use crate::params::{slice_of, slice_of_mut, Parameters, TensorRef};
use crate::types::{code_add, EmbeddingVec, PipelineMode, WPlusCode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeadLayout {
    /// One trunk emits every style layer.
    #[default]
    Shared,
    /// Separate stacks for the coarse, medium and fine layer groups.
    PerGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapperConfig {
    pub hidden_dim: usize,
    /// Number of affine layers per stack.
    pub depth: usize,
    pub heads: HeadLayout,
    /// Emit one style vector and repeat it over all layers.
    pub broadcast: bool,
    /// Multiplier applied to the last layer's initial weights.
    pub output_scale: f64,
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 512,
            depth: 4,
            heads: HeadLayout::Shared,
            broadcast: false,
            output_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// (out × in)
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// One stack of affine layers covering a contiguous range of style layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub layers: Vec<Dense>,
    pub style_layers: Range<usize>,
}

/// A multilayer map `R^in → R^(L × D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mapper {
    pub heads: Vec<Head>,
    pub in_dim: usize,
    pub num_layers: usize,
    pub style_dim: usize,
    pub broadcast: bool,
    pub activation_slope: f64,
    /// When false every layer is purely affine.
    pub activations: bool,
}

/// Coarse / medium / fine split of `num_layers` style layers.
pub fn layer_groups(num_layers: usize) -> Vec<Range<usize>> {
    if num_layers >= 9 {
        return vec![0..4, 4..8, 8..num_layers];
    }
    let base = num_layers / 3;
    let extra = num_layers % 3;
    let mut out = Vec::new();
    let mut start = 0;
    for g in 0..3 {
        let len = base + usize::from(g < extra);
        if len > 0 {
            out.push(start..start + len);
        }
        start += len;
    }
    out
}

/// Per-layer forward values kept for the backward pass.
struct HeadTrace {
    /// Inputs to each dense layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of each dense layer.
    pre: Vec<Array2<f64>>,
}

/// Forward record of a batched mapper call.
pub struct MapperTrace {
    heads: Vec<HeadTrace>,
}

impl Mapper {
    pub fn new(
        in_dim: usize,
        num_layers: usize,
        style_dim: usize,
        cfg: &MapperConfig,
        seed: u64,
    ) -> Result<Self> {
        if cfg.depth == 0 || cfg.hidden_dim == 0 || num_layers == 0 || style_dim == 0 {
            return Err(Error::InvalidArgument("mapper dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let groups = match (cfg.heads, cfg.broadcast) {
            (_, true) | (HeadLayout::Shared, false) => vec![0..num_layers],
            (HeadLayout::PerGroup, false) => layer_groups(num_layers),
        };
        let heads = groups
            .into_iter()
            .map(|range| {
                let out_dim = if cfg.broadcast {
                    style_dim
                } else {
                    range.len() * style_dim
                };
                let mut layers = Vec::with_capacity(cfg.depth);
                for d in 0..cfg.depth {
                    let fan_in = if d == 0 { in_dim } else { cfg.hidden_dim };
                    let fan_out = if d + 1 == cfg.depth { out_dim } else { cfg.hidden_dim };
                    let mut std = (2.0 / fan_in as f64).sqrt();
                    if d + 1 == cfg.depth {
                        std *= cfg.output_scale;
                    }
                    let normal = Normal::new(0.0, std).expect("valid std");
                    layers.push(Dense {
                        weight: Array2::from_shape_simple_fn((fan_out, fan_in), || {
                            normal.sample(&mut rng)
                        }),
                        bias: Array1::zeros(fan_out),
                    });
                }
                Head {
                    layers,
                    style_layers: range,
                }
            })
            .collect();
        Ok(Self {
            heads,
            in_dim,
            num_layers,
            style_dim,
            broadcast: cfg.broadcast,
            activation_slope: ACTIVATION_SLOPE,
            activations: true,
        })
    }

    /// Same architecture with every weight and bias zeroed.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for head in &mut out.heads {
            for layer in &mut head.layers {
                layer.weight.fill(0.0);
                layer.bias.fill(0.0);
            }
        }
        out
    }

    fn act(&self, x: f64) -> f64 {
        if self.activations {
            leaky_relu(x, self.activation_slope)
        } else {
            x
        }
    }

    fn act_grad(&self, x: f64) -> f64 {
        if self.activations {
            leaky_relu_grad(x, self.activation_slope)
        } else {
            1.0
        }
    }

    /// Maps a batch of row-vector inputs (B × in) to (B × L·D).
    pub fn forward_batch(&self, input: &Array2<f64>) -> Result<(Array2<f64>, MapperTrace)> {
        if input.ncols() != self.in_dim {
            return Err(Error::Shape(format!(
                "mapper expects input width {}, got {}",
                self.in_dim,
                input.ncols()
            )));
        }
        let batch = input.nrows();
        let mut out = Array2::zeros((batch, self.num_layers * self.style_dim));
        let mut traces = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let mut x = input.to_owned();
            let mut inputs = Vec::with_capacity(head.layers.len());
            let mut pre = Vec::with_capacity(head.layers.len());
            let last = head.layers.len() - 1;
            for (d, layer) in head.layers.iter().enumerate() {
                let z = x.dot(&layer.weight.t()) + &layer.bias;
                inputs.push(x);
                x = if d == last {
                    z.clone()
                } else {
                    z.mapv(|v| self.act(v))
                };
                pre.push(z);
            }
            if self.broadcast {
                for l in 0..self.num_layers {
                    out.slice_mut(s![.., l * self.style_dim..(l + 1) * self.style_dim])
                        .assign(&x);
                }
            } else {
                let cols = head.style_layers.start * self.style_dim
                    ..head.style_layers.end * self.style_dim;
                out.slice_mut(s![.., cols]).assign(&x);
            }
            traces.push(HeadTrace { inputs, pre });
        }
        Ok((out, MapperTrace { heads: traces }))
    }

    /// Back-propagates `grad_out` (B × L·D); returns parameter gradients
    /// (as a mapper of the same shape) and input gradients (B × in).
    pub fn backward_batch(
        &self,
        trace: &MapperTrace,
        grad_out: &Array2<f64>,
    ) -> Result<(Mapper, Array2<f64>)> {
        let batch = grad_out.nrows();
        if grad_out.ncols() != self.num_layers * self.style_dim {
            return Err(Error::Shape("mapper output gradient width".into()));
        }
        if trace.heads.len() != self.heads.len()
            || trace.heads.iter().any(|h| h.inputs.first().map(|x| x.nrows()) != Some(batch))
        {
            return Err(Error::Shape("mapper trace does not match the gradient batch".into()));
        }
        let mut grad_heads = Vec::with_capacity(self.heads.len());
        let mut grad_in = Array2::zeros((batch, self.in_dim));
        for (head, ht) in self.heads.iter().zip(&trace.heads) {
            let mut g = if self.broadcast {
                let mut acc = Array2::zeros((batch, self.style_dim));
                for l in 0..self.num_layers {
                    acc += &grad_out.slice(s![.., l * self.style_dim..(l + 1) * self.style_dim]);
                }
                acc
            } else {
                let cols = head.style_layers.start * self.style_dim
                    ..head.style_layers.end * self.style_dim;
                grad_out.slice(s![.., cols]).to_owned()
            };
            let last = head.layers.len() - 1;
            let mut layers = Vec::with_capacity(head.layers.len());
            for d in (0..head.layers.len()).rev() {
                if d != last {
                    g.zip_mut_with(&ht.pre[d], |gv, &z| *gv *= self.act_grad(z));
                }
                layers.push(Dense {
                    weight: g.t().dot(&ht.inputs[d]),
                    bias: g.sum_axis(Axis(0)),
                });
                g = g.dot(&head.layers[d].weight);
            }
            layers.reverse();
            grad_in += &g;
            grad_heads.push(Head {
                layers,
                style_layers: head.style_layers.clone(),
            });
        }
        let grads = Mapper {
            heads: grad_heads,
            ..self.clone_shell()
        };
        Ok((grads, grad_in))
    }

    /// Same configuration with no heads.
    fn clone_shell(&self) -> Mapper {
        Mapper {
            heads: Vec::new(),
            in_dim: self.in_dim,
            num_layers: self.num_layers,
            style_dim: self.style_dim,
            broadcast: self.broadcast,
            activation_slope: self.activation_slope,
            activations: self.activations,
        }
    }

    pub fn forward(&self, z: &EmbeddingVec) -> Result<WPlusCode> {
        let input = z.0.view().insert_axis(Axis(0)).to_owned();
        let (out, _) = self.forward_batch(&input)?;
        let row = out.row(0).to_owned();
        let data = row
            .into_shape_with_order((self.num_layers, self.style_dim))
            .map_err(|e| Error::Shape(e.to_string()))?;
        WPlusCode::from_array(data)
    }

    pub fn add_scaled(&mut self, other: &Mapper, factor: f64) {
        for (h, oh) in self.heads.iter_mut().zip(&other.heads) {
            for (l, ol) in h.layers.iter_mut().zip(&oh.layers) {
                l.weight.scaled_add(factor, &ol.weight);
                l.bias.scaled_add(factor, &ol.bias);
            }
        }
    }
}

impl Parameters for Mapper {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        for (hi, head) in self.heads.iter().enumerate() {
            for (li, layer) in head.layers.iter().enumerate() {
                out.push(TensorRef {
                    name: format!("head{hi}.layer{li}.weight"),
                    shape: layer.weight.shape().to_vec(),
                    data: slice_of(&layer.weight),
                });
                out.push(TensorRef {
                    name: format!("head{hi}.layer{li}.bias"),
                    shape: layer.bias.shape().to_vec(),
                    data: slice_of(&layer.bias),
                });
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (hi, head) in self.heads.iter_mut().enumerate() {
            for (li, layer) in head.layers.iter_mut().enumerate() {
                out.push((format!("head{hi}.layer{li}.weight"), slice_of_mut(&mut layer.weight)));
                out.push((format!("head{hi}.layer{li}.bias"), slice_of_mut(&mut layer.bias)));
            }
        }
        out
    }
}

/// `w_v = H_v(z_v)`; only meaningful in real-image mode.
pub fn map_visual(
    z_v: &EmbeddingVec,
    mapper: Option<&Mapper>,
    mode: PipelineMode,
) -> Result<WPlusCode> {
    match (mode, mapper) {
        (PipelineMode::Sampled, _) => Err(Error::config(
            "train.mode",
            "the visual mapper is not part of the sampled-content pipeline",
        )),
        (PipelineMode::RealImage, None) => Err(Error::config(
            "model.visual_mapper",
            "real-image mode needs a visual mapper",
        )),
        (PipelineMode::RealImage, Some(m)) => m.forward(z_v),
    }
}

/// `Δw^(i) = H_t(z^(i))`.
pub fn map_motion(z: &EmbeddingVec, mapper: &Mapper) -> Result<WPlusCode> {
    mapper.forward(z)
}

/// Frame code `Δw + w_s` with `w_s = w_v + w_inv`; returns `(w, w_s)`.
pub fn compose_frame_code(
    delta: &WPlusCode,
    w_v: Option<&WPlusCode>,
    w_inv: &WPlusCode,
) -> Result<(WPlusCode, WPlusCode)> {
    let w_s = match w_v {
        Some(v) => code_add(v, w_inv)?,
        None => w_inv.clone(),
    };
    let w = code_add(delta, &w_s)?;
    Ok((w, w_s))
}
