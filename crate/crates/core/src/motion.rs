//! Recurrent residual motion generator.
//!
//! Each step builds a context `c = act(W1 z) ‖ h` and advances the motion
//! code and hidden state by scaled, activated residuals:
//! `z' = z + r1 * act(W2 c)`, `h' = h + r2 * act(W3 c)`.

use ndarray::{s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::EmbeddingVec;

pub const HIDDEN_DIM: usize = 384;
pub const ACTIVATION_SLOPE: f64 = 0.1;
pub const BASE_RESIDUAL_SCALE: f64 = 0.2;
/// Variance of the initial hidden state.
pub const HIDDEN_INIT_VARIANCE: f64 = 0.01;
const WEIGHT_INIT_STD: f64 = 0.02;

#[inline]
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
pub fn leaky_relu_grad(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        slope
    }
}

/// Recurrent state: the motion code `z` and the hidden vector `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionState {
    pub z: EmbeddingVec,
    pub h: Array1<f64>,
}

/// Learnable matrices of the motion generator.
///
/// Shapes: `w1` is (p × z), `w2` is (z × (p + h)), `w3` is (h × (p + h)).
/// At full scale p = h = 384 and z = 512.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentWeights {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
    pub w3: Array2<f64>,
    pub activation_slope: f64,
}

impl RecurrentWeights {
    /// Gaussian N(0, 0.02²) initialization.
    pub fn init(z_dim: usize, proj_dim: usize, h_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, WEIGHT_INIT_STD).expect("valid std");
        let mut draw = |r: usize, c: usize| {
            Array2::from_shape_simple_fn((r, c), || normal.sample(&mut rng))
        };
        let ctx = proj_dim + h_dim;
        Self {
            w1: draw(proj_dim, z_dim),
            w2: draw(z_dim, ctx),
            w3: draw(h_dim, ctx),
            activation_slope: ACTIVATION_SLOPE,
        }
    }

    pub fn zeros(z_dim: usize, proj_dim: usize, h_dim: usize) -> Self {
        let ctx = proj_dim + h_dim;
        Self {
            w1: Array2::zeros((proj_dim, z_dim)),
            w2: Array2::zeros((z_dim, ctx)),
            w3: Array2::zeros((h_dim, ctx)),
            activation_slope: ACTIVATION_SLOPE,
        }
    }

    pub fn z_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn proj_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn h_dim(&self) -> usize {
        self.w3.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (p, z) = self.w1.dim();
        let h = self.w3.nrows();
        if self.w2.dim() != (z, p + h) || self.w3.dim() != (h, p + h) {
            return Err(Error::Shape(format!(
                "recurrent weights: w1 {:?}, w2 {:?}, w3 {:?}",
                self.w1.dim(),
                self.w2.dim(),
                self.w3.dim()
            )));
        }
        let finite = |m: &Array2<f64>| m.iter().all(|v| v.is_finite());
        if !(finite(&self.w1) && finite(&self.w2) && finite(&self.w3)) {
            return Err(Error::NonFinite("recurrent weights".into()));
        }
        Ok(())
    }
}

/// Gradients of a rollout with respect to its inputs. Initial-state
/// gradients have one row per trajectory.
#[derive(Debug, Clone)]
pub struct RolloutGrads {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
    pub w3: Array2<f64>,
    pub z_init: Array2<f64>,
    pub h_init: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryMode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    /// Number of motion codes emitted, including the initial one.
    pub frames: usize,
    /// Length of the whole generated sequence; used by the inference decay.
    pub total_inference_frames: usize,
    pub mode: TrajectoryMode,
    pub base_scale: f64,
}

impl TrajectoryConfig {
    pub fn train(frames: usize) -> Self {
        Self {
            frames,
            total_inference_frames: frames,
            mode: TrajectoryMode::Train,
            base_scale: BASE_RESIDUAL_SCALE,
        }
    }

    pub fn infer(frames: usize, total_inference_frames: usize) -> Self {
        Self {
            frames,
            total_inference_frames,
            mode: TrajectoryMode::Infer,
            base_scale: BASE_RESIDUAL_SCALE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::InvalidArgument("trajectory needs at least one frame".into()));
        }
        if self.mode == TrajectoryMode::Infer && self.total_inference_frames < self.frames {
            return Err(Error::InvalidArgument(format!(
                "total_inference_frames ({}) < frames ({})",
                self.total_inference_frames, self.frames
            )));
        }
        Ok(())
    }
}

/// Initial state: `z = z_t + z_v` (or `z_t` alone) and `h ~ N(0, 0.01 I)`.
pub fn init_state(
    z_t: &EmbeddingVec,
    z_v: Option<&EmbeddingVec>,
    h_dim: usize,
    seed: u64,
) -> Result<MotionState> {
    let z = match z_v {
        Some(v) => z_t.try_add(v)?,
        None => z_t.clone(),
    };
    Ok(MotionState {
        z,
        h: sample_hidden(h_dim, seed),
    })
}

/// Draws `h_dim` i.i.d. samples from N(0, 0.01).
pub fn sample_hidden(h_dim: usize, seed: u64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, HIDDEN_INIT_VARIANCE.sqrt()).expect("valid std");
    Array1::from_shape_simple_fn(h_dim, || normal.sample(&mut rng))
}

/// Residual scales `(r1, r2)` used to produce motion code `i` (1-based).
pub fn residual_scale(i: usize, cfg: &TrajectoryConfig) -> Result<(f64, f64)> {
    if i == 0 || i > cfg.frames {
        return Err(Error::InvalidArgument(format!(
            "timestamp {i} outside 1..={}",
            cfg.frames
        )));
    }
    let r = match cfg.mode {
        TrajectoryMode::Train => cfg.base_scale,
        TrajectoryMode::Infer => {
            cfg.base_scale * (cfg.frames + 1 - i) as f64 / cfg.total_inference_frames as f64
        }
    };
    Ok((r, r))
}

/// Intermediate values of one step, one row per rollout in the batch.
#[derive(Debug, Clone)]
struct StepCache {
    z_prev: Array2<f64>,
    a1: Array2<f64>,
    ctx: Array2<f64>,
    a2: Array2<f64>,
    a3: Array2<f64>,
    r1: f64,
    r2: f64,
}

/// Dot product with eight independent partial sums.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `x · wᵀ`, one weight row at a time so every weight is read once per
/// batch and each entry is the same dot product whatever the batch size.
fn times_transposed(x: &Array2<f64>, w: &Array2<f64>) -> Array2<f64> {
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let ws = w.as_slice().expect("weights are stored in standard layout");
    let (k, n) = (x.ncols(), w.nrows());
    let mut out = Array2::zeros((x.nrows(), n));
    for (j, row) in ws.chunks_exact(k).enumerate() {
        for (b, xb) in xs.chunks_exact(k).enumerate() {
            out[[b, j]] = dot(row, xb);
        }
    }
    out
}

/// `g · w`, accumulated over the rows of `w`.
fn times(g: &Array2<f64>, w: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((g.nrows(), w.ncols()));
    for (i, row) in w.rows().into_iter().enumerate() {
        for (b, mut ob) in out.rows_mut().into_iter().enumerate() {
            ob.scaled_add(g[[b, i]], &row);
        }
    }
    out
}

fn step_cached(
    z: &Array2<f64>,
    h: &Array2<f64>,
    w: &RecurrentWeights,
    r1: f64,
    r2: f64,
) -> Result<(Array2<f64>, Array2<f64>, StepCache)> {
    let slope = w.activation_slope;
    let act = |m: &Array2<f64>| m.mapv(|x| leaky_relu(x, slope));
    let a1 = times_transposed(z, &w.w1);
    let ctx = ndarray::concatenate(Axis(1), &[act(&a1).view(), h.view()])
        .map_err(|e| Error::Shape(e.to_string()))?;
    let a2 = times_transposed(&ctx, &w.w2);
    let a3 = times_transposed(&ctx, &w.w3);
    let z_next = z + &(act(&a2) * r1);
    let h_next = h + &(act(&a3) * r2);
    if z_next.iter().chain(h_next.iter()).any(|v| !v.is_finite()) {
        let worst = a2
            .iter()
            .chain(a3.iter())
            .fold(0.0f64, |m, v| if v.is_finite() { m.max(v.abs()) } else { f64::INFINITY });
        return Err(Error::NonFinite(format!(
            "motion step (max |pre-activation| = {worst:e}, r1 = {r1}, r2 = {r2})"
        )));
    }
    let cache = StepCache {
        z_prev: z.clone(),
        a1,
        ctx,
        a2,
        a3,
        r1,
        r2,
    };
    Ok((z_next, h_next, cache))
}

fn as_row(v: &Array1<f64>) -> Array2<f64> {
    v.view().insert_axis(Axis(0)).to_owned()
}

/// One recurrent update.
pub fn step(state: &MotionState, w: &RecurrentWeights, r1: f64, r2: f64) -> Result<MotionState> {
    if state.z.len() != w.z_dim() || state.h.len() != w.h_dim() {
        return Err(Error::Shape(format!(
            "state (z {}, h {}) vs weights (z {}, h {})",
            state.z.len(),
            state.h.len(),
            w.z_dim(),
            w.h_dim()
        )));
    }
    let (z, h, _) = step_cached(&as_row(&state.z.0), &as_row(&state.h), w, r1, r2)?;
    Ok(MotionState {
        z: EmbeddingVec(z.row(0).to_owned()),
        h: h.row(0).to_owned(),
    })
}

/// Recorded rollout of a batch of independent trajectories, with what the
/// backward pass needs.
#[derive(Debug, Clone)]
pub struct RolloutTrace {
    /// Motion codes per step, one row per trajectory.
    z: Vec<Array2<f64>>,
    /// Hidden states per step, one row per trajectory.
    h: Vec<Array2<f64>>,
    caches: Vec<StepCache>,
    slope: f64,
}

impl RolloutTrace {
    pub fn batch_size(&self) -> usize {
        self.z[0].nrows()
    }

    pub fn frames(&self) -> usize {
        self.z.len()
    }

    /// Motion codes of trajectory `item`.
    pub fn codes(&self, item: usize) -> Vec<EmbeddingVec> {
        self.z.iter().map(|z| EmbeddingVec(z.row(item).to_owned())).collect()
    }

    /// All codes stacked trajectory-major: row `item · T + t`.
    pub fn stacked_codes(&self) -> Array2<f64> {
        let (b, t) = (self.batch_size(), self.frames());
        let mut out = Array2::zeros((b * t, self.z[0].ncols()));
        for (i, z) in self.z.iter().enumerate() {
            for item in 0..b {
                out.row_mut(item * t + i).assign(&z.row(item));
            }
        }
        out
    }

    pub fn final_state(&self, item: usize) -> MotionState {
        MotionState {
            z: EmbeddingVec(self.z[self.frames() - 1].row(item).to_owned()),
            h: self.h[self.frames() - 1].row(item).to_owned(),
        }
    }

    /// Back-propagates code gradients laid out like [`Self::stacked_codes`]
    /// through every recorded step. Weight gradients are summed over the batch.
    pub fn backward(&self, w: &RecurrentWeights, grad_codes: &Array2<f64>) -> Result<RolloutGrads> {
        let (batch, frames) = (self.batch_size(), self.frames());
        let (zd, hd, p) = (w.z_dim(), w.h_dim(), w.proj_dim());
        if grad_codes.dim() != (batch * frames, zd) {
            return Err(Error::Shape(format!(
                "code gradients {:?} for {batch} trajectories of {frames} codes",
                grad_codes.dim()
            )));
        }
        let slope = self.slope;
        let d_act = |m: &Array2<f64>| m.mapv(|x| leaky_relu_grad(x, slope));
        let grad_at = |t: usize| {
            let mut g = Array2::zeros((batch, zd));
            for item in 0..batch {
                g.row_mut(item).assign(&grad_codes.row(item * frames + t));
            }
            g
        };
        // Pre-activation gradients and layer inputs of every step, stacked so
        // each weight gradient is a single matrix product.
        let steps = self.caches.len();
        let rows = steps * batch;
        let mut g1 = Array2::<f64>::zeros((rows, p));
        let mut g2 = Array2::<f64>::zeros((rows, zd));
        let mut g3 = Array2::<f64>::zeros((rows, hd));
        let mut ctxs = Array2::<f64>::zeros((rows, p + hd));
        let mut zs = Array2::<f64>::zeros((rows, zd));
        let mut gz = Array2::<f64>::zeros((batch, zd));
        let mut gh = Array2::<f64>::zeros((batch, hd));
        for (t, cache) in self.caches.iter().enumerate().rev() {
            gz += &grad_at(t + 1);
            let ga2 = &gz * &d_act(&cache.a2) * cache.r1;
            let ga3 = &gh * &d_act(&cache.a3) * cache.r2;
            let gctx = times(&ga2, &w.w2) + times(&ga3, &w.w3);
            let ga1 = &gctx.slice(s![.., ..p]) * &d_act(&cache.a1);
            gz += &times(&ga1, &w.w1);
            gh += &gctx.slice(s![.., p..]);
            let block = s![t * batch..(t + 1) * batch, ..];
            g1.slice_mut(block).assign(&ga1);
            g2.slice_mut(block).assign(&ga2);
            g3.slice_mut(block).assign(&ga3);
            ctxs.slice_mut(block).assign(&cache.ctx);
            zs.slice_mut(block).assign(&cache.z_prev);
        }
        gz += &grad_at(0);
        Ok(RolloutGrads {
            w1: g1.t().dot(&zs),
            w2: g2.t().dot(&ctxs),
            w3: g3.t().dot(&ctxs),
            z_init: gz,
            h_init: gh,
        })
    }
}

/// Runs the generator for `cfg.frames` codes from every initial state at
/// once and keeps the trace.
pub fn rollout_batch(
    inits: &[MotionState],
    w: &RecurrentWeights,
    cfg: &TrajectoryConfig,
) -> Result<RolloutTrace> {
    cfg.validate()?;
    w.validate()?;
    if inits.is_empty() {
        return Err(Error::InvalidArgument("rollout needs at least one initial state".into()));
    }
    if inits.iter().any(|s| s.z.len() != w.z_dim() || s.h.len() != w.h_dim()) {
        return Err(Error::Shape("initial state does not match weights".into()));
    }
    let stack = |pick: &dyn Fn(&MotionState) -> &Array1<f64>, d: usize| {
        let mut m = Array2::zeros((inits.len(), d));
        for (r, s) in inits.iter().enumerate() {
            m.row_mut(r).assign(pick(s));
        }
        m
    };
    let mut z = vec![stack(&|s| &s.z.0, w.z_dim())];
    let mut h = vec![stack(&|s| &s.h, w.h_dim())];
    let mut caches = Vec::with_capacity(cfg.frames.saturating_sub(1));
    for i in 2..=cfg.frames {
        let (r1, r2) = residual_scale(i, cfg)?;
        let (zn, hn, cache) = step_cached(&z[i - 2], &h[i - 2], w, r1, r2)?;
        z.push(zn);
        h.push(hn);
        caches.push(cache);
    }
    Ok(RolloutTrace {
        z,
        h,
        caches,
        slope: w.activation_slope,
    })
}

/// Single-trajectory [`rollout_batch`].
pub fn rollout_traced(
    init: &MotionState,
    w: &RecurrentWeights,
    cfg: &TrajectoryConfig,
) -> Result<RolloutTrace> {
    rollout_batch(std::slice::from_ref(init), w, cfg)
}

/// Motion codes `z^(1..=T)`; the first is the initial code itself.
pub fn rollout(
    init: &MotionState,
    w: &RecurrentWeights,
    cfg: &TrajectoryConfig,
) -> Result<Vec<EmbeddingVec>> {
    rollout_traced(init, w, cfg).map(|t| t.codes(0))
}
