//! Adam with per-group learning rates and global-norm clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Parameters;

/// Optimizer groups of trainable tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Encoders,
    Mappers,
    Recurrent,
}

/// Per-group learning rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupRates {
    pub encoders: f64,
    pub mappers: f64,
    pub recurrent: f64,
}

impl GroupRates {
    pub fn of(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Encoders => self.encoders,
            ParamGroup::Mappers => self.mappers,
            ParamGroup::Recurrent => self.recurrent,
        }
    }
}

/// Moment estimates for every tensor of one parameter container.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub step: u64,
    pub names: Vec<String>,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &impl Parameters, beta1: f64, beta2: f64, eps: f64) -> Self {
        let tensors = params.tensors();
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            names: tensors.iter().map(|t| t.name.clone()).collect(),
            first: tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
            second: tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
        }
    }

    /// One update. `rate` gives the learning rate for each tensor name.
    pub fn update<P: Parameters>(
        &mut self,
        params: &mut P,
        grads: &P,
        rate: impl Fn(&str) -> f64,
    ) -> Result<()> {
        let grad_tensors = grads.tensors();
        let targets = params.tensors_mut();
        if targets.len() != self.names.len() || grad_tensors.len() != self.names.len() {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, ((name, p), g)) in targets.into_iter().zip(&grad_tensors).enumerate() {
            if name != self.names[k] || g.data.len() != p.len() || p.len() != self.first[k].len() {
                return Err(Error::Shape(format!("optimizer tensor `{name}` does not match")));
            }
            let lr = rate(&name);
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            let moments = self.first[k].iter_mut().zip(self.second[k].iter_mut());
            for ((pi, &gi), (mi, vi)) in p.iter_mut().zip(g.data).zip(moments) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *pi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Euclidean norm over every gradient tensor.
pub fn global_norm(grads: &impl Parameters) -> f64 {
    grads
        .tensors()
        .iter()
        .map(|t| t.data.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut impl Parameters, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let f = max_norm / norm;
        for (_, t) in grads.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= f);
        }
    }
    norm
}
