//! Gradient checks shared by the gradient tests and the acceptance run.
//! Every check returns labelled relative errors.

use ndarray::{Array1, Array2, Array3};
use textanim::backend::render::{FaceRenderer, NUM_ATTRIBUTES};
use textanim::backend::toy::{ToyConfig, ToySynthesizer};
use textanim::backend::{MultiScaleMse, PerceptualBackend, SynthesizerBackend};
use textanim::loss::{
    contrastive_eval, direct_similarity_eval, path_reg_grad, path_reg_loss, w_reg_grad, w_reg_loss,
    ContrastiveOptions, PathRegOrder,
};
use textanim::mapper::{HeadLayout, Mapper, MapperConfig};
use textanim::motion::{rollout_batch, MotionState, RecurrentWeights, TrajectoryConfig};
use textanim::params::Parameters;
use textanim::types::{EmbeddingVec, ImageTensor, WPlusCode};

use super::{grad_error, rng, uniform};

pub const TOL: f64 = 1e-4;
pub const STEP: f64 = 1e-6;

pub type Errors = Vec<(String, f64)>;

fn codes_from(flat: &[f64], t: usize, l: usize, d: usize) -> Vec<WPlusCode> {
    (0..t)
        .map(|i| WPlusCode(Array2::from_shape_vec((l, d), flat[i * l * d..(i + 1) * l * d].to_vec()).unwrap()))
        .collect()
}

fn flat_of(arrays: &[Array2<f64>]) -> Vec<f64> {
    arrays.iter().flat_map(|a| a.iter().copied()).collect()
}

fn flat_rows(rows: &[Array1<f64>]) -> Vec<f64> {
    rows.iter().flat_map(|r| r.iter().copied()).collect()
}

pub fn w_reg() -> Errors {
    let (t, l, d) = (5, 3, 4);
    let mut r = rng(1);
    let x = uniform(&mut r, t * l * d, -1.0, 1.0);
    let anchor = WPlusCode(Array2::from_shape_vec((l, d), uniform(&mut r, l * d, -1.0, 1.0)).unwrap());
    let (g_seq, g_anchor) = w_reg_grad(&codes_from(&x, t, l, d), &anchor).unwrap();
    let mut f = |v: &[f64]| w_reg_loss(&codes_from(v, t, l, d), &anchor).unwrap();
    let seq_err = grad_error(&mut f, &x, &flat_of(&g_seq), None, STEP);

    let seq = codes_from(&x, t, l, d);
    let a0: Vec<f64> = anchor.0.iter().copied().collect();
    let mut f = |v: &[f64]| w_reg_loss(&seq, &WPlusCode(Array2::from_shape_vec((l, d), v.to_vec()).unwrap())).unwrap();
    let anchor_err = grad_error(&mut f, &a0, &g_anchor.iter().copied().collect::<Vec<_>>(), None, STEP);
    vec![("w_reg sequence".into(), seq_err), ("w_reg anchor".into(), anchor_err)]
}

pub fn path_reg() -> Errors {
    let (t, l, d) = (6, 2, 3);
    let x = uniform(&mut rng(2), t * l * d, -1.0, 1.0);
    [PathRegOrder::Second, PathRegOrder::First]
        .into_iter()
        .map(|order| {
            let g = path_reg_grad(&codes_from(&x, t, l, d), order).unwrap();
            let mut f = |v: &[f64]| path_reg_loss(&codes_from(v, t, l, d), order).unwrap();
            (format!("path_reg {order:?}"), grad_error(&mut f, &x, &flat_of(&g), None, STEP))
        })
        .collect()
}

fn embeddings(flat: &[f64], n: usize, d: usize) -> Vec<EmbeddingVec> {
    (0..n).map(|i| EmbeddingVec(Array1::from(flat[i * d..(i + 1) * d].to_vec()))).collect()
}

pub fn alignment() -> Errors {
    let (n, d, tau) = (4, 6, 0.07);
    let mut r = rng(3);
    let v = uniform(&mut r, n * d, -1.0, 1.0);
    let t = uniform(&mut r, n * d, -1.0, 1.0);
    let variants = [
        ("normalized", ContrastiveOptions::default()),
        ("raw", ContrastiveOptions { normalize: false, symmetric: false }),
        ("symmetric", ContrastiveOptions { normalize: true, symmetric: true }),
    ];
    // Raw inner products need a milder scale to stay in a smooth regime.
    let raw_scale = 0.1;
    let mut out = Errors::new();
    for (name, opts) in variants {
        let s = if opts.normalize { 1.0 } else { raw_scale };
        let v: Vec<f64> = v.iter().map(|x| x * s).collect();
        let t: Vec<f64> = t.iter().map(|x| x * s).collect();
        let eval = contrastive_eval(&embeddings(&v, n, d), &embeddings(&t, n, d), tau, opts).unwrap();
        let tv = embeddings(&t, n, d);
        let mut f = |x: &[f64]| contrastive_eval(&embeddings(x, n, d), &tv, tau, opts).unwrap().value;
        out.push((format!("contrastive {name} image side"), grad_error(&mut f, &v, &flat_rows(&eval.grad_images), None, STEP)));
        let vv = embeddings(&v, n, d);
        let mut f = |x: &[f64]| contrastive_eval(&vv, &embeddings(x, n, d), tau, opts).unwrap().value;
        out.push((format!("contrastive {name} text side"), grad_error(&mut f, &t, &flat_rows(&eval.grad_texts), None, STEP)));
    }

    let eval = direct_similarity_eval(&embeddings(&v, n, d), &embeddings(&t, n, d), tau, true).unwrap();
    let tv = embeddings(&t, n, d);
    let mut f = |x: &[f64]| direct_similarity_eval(&embeddings(x, n, d), &tv, tau, true).unwrap().value;
    out.push(("direct similarity".into(), grad_error(&mut f, &v, &flat_rows(&eval.grad_images), None, STEP)));
    out
}

pub fn perceptual() -> Errors {
    let (h, w) = (8, 8);
    let mut r = rng(4);
    let a = uniform(&mut r, h * w * 3, 0.1, 0.9);
    let b = ImageTensor(Array3::from_shape_vec((h, w, 3), uniform(&mut r, h * w * 3, 0.1, 0.9)).unwrap());
    let img = |v: &[f64]| ImageTensor(Array3::from_shape_vec((h, w, 3), v.to_vec()).unwrap());
    let (_, g) = MultiScaleMse.distance_grad(&img(&a), &b).unwrap();
    let mut f = |v: &[f64]| MultiScaleMse.distance(&img(v), &b).unwrap();
    vec![("perceptual".into(), grad_error(&mut f, &a, &g.iter().copied().collect::<Vec<_>>(), None, STEP))]
}

fn small_recurrent(seed: u64) -> RecurrentWeights {
    let mut r = rng(seed);
    let (z, p, h) = (8, 6, 6);
    let mut m = |rows: usize, cols: usize| Array2::from_shape_vec((rows, cols), uniform(&mut r, rows * cols, -0.5, 0.5)).unwrap();
    RecurrentWeights {
        w1: m(p, z),
        w2: m(z, p + h),
        w3: m(h, p + h),
        activation_slope: 0.1,
    }
}

fn states(batch: usize, seed: u64) -> Vec<MotionState> {
    let mut r = rng(seed);
    (0..batch)
        .map(|_| MotionState {
            z: EmbeddingVec(Array1::from(uniform(&mut r, 8, -1.0, 1.0))),
            h: Array1::from(uniform(&mut r, 6, -0.3, 0.3)),
        })
        .collect()
}

/// Rollout with z ∈ R^8, h ∈ R^6 over `cfg.frames` codes for `batch`
/// trajectories at once.
pub fn rollout(batch: usize, cfg: TrajectoryConfig) -> Errors {
    let frames = cfg.frames;
    let weights = small_recurrent(10 + batch as u64);
    let inits = states(batch, 20 + batch as u64);
    let probe = Array2::from_shape_vec((batch * frames, 8), uniform(&mut rng(30), batch * frames * 8, -1.0, 1.0)).unwrap();
    let loss = |w: &RecurrentWeights, inits: &[MotionState]| {
        let trace = rollout_batch(inits, w, &cfg).unwrap();
        (trace.stacked_codes() * &probe).sum()
    };
    let trace = rollout_batch(&inits, &weights, &cfg).unwrap();
    let grads = trace.backward(&weights, &probe).unwrap();

    let x = weights.flatten();
    let mut f = |v: &[f64]| {
        let mut w = weights.clone();
        w.assign_flat(v).unwrap();
        loss(&w, &inits)
    };
    let weight_err = grad_error(&mut f, &x, &grads.flatten(), None, STEP);

    let x: Vec<f64> = inits.iter().flat_map(|s| s.z.0.iter().copied().chain(s.h.iter().copied())).collect();
    let analytic: Vec<f64> = (0..batch)
        .flat_map(|b| grads.z_init.row(b).to_vec().into_iter().chain(grads.h_init.row(b).to_vec()))
        .collect();
    let mut f = |v: &[f64]| {
        let s: Vec<MotionState> = (0..batch)
            .map(|b| MotionState {
                z: EmbeddingVec(Array1::from(v[b * 14..b * 14 + 8].to_vec())),
                h: Array1::from(v[b * 14 + 8..b * 14 + 14].to_vec()),
            })
            .collect();
        loss(&weights, &s)
    };
    let init_err = grad_error(&mut f, &x, &analytic, None, STEP);
    let tag = format!("rollout {:?} batch {batch}", cfg.mode);
    vec![(format!("{tag} weights"), weight_err), (format!("{tag} initial state"), init_err)]
}

fn mapper(cfg: MapperConfig, label: &str) -> Errors {
    let (in_dim, layers, style, batch) = (5, 4, 3, 3);
    let mapper = Mapper::new(in_dim, layers, style, &cfg, 40).unwrap();
    let mut r = rng(41);
    let input = Array2::from_shape_vec((batch, in_dim), uniform(&mut r, batch * in_dim, -1.0, 1.0)).unwrap();
    let probe = Array2::from_shape_vec((batch, layers * style), uniform(&mut r, batch * layers * style, -1.0, 1.0)).unwrap();
    let loss = |m: &Mapper, x: &Array2<f64>| (m.forward_batch(x).unwrap().0 * &probe).sum();
    let (_, trace) = mapper.forward_batch(&input).unwrap();
    let (g_params, g_input) = mapper.backward_batch(&trace, &probe).unwrap();

    let x = mapper.flatten();
    let mut f = |v: &[f64]| {
        let mut m = mapper.clone();
        m.assign_flat(v).unwrap();
        loss(&m, &input)
    };
    let param_err = grad_error(&mut f, &x, &g_params.flatten(), None, STEP);

    let x: Vec<f64> = input.iter().copied().collect();
    let mut f = |v: &[f64]| loss(&mapper, &Array2::from_shape_vec((batch, in_dim), v.to_vec()).unwrap());
    let input_err = grad_error(&mut f, &x, &g_input.iter().copied().collect::<Vec<_>>(), None, STEP);
    vec![(format!("{label} parameters"), param_err), (format!("{label} input"), input_err)]
}

pub fn motion_mapper() -> Errors {
    mapper(
        MapperConfig {
            hidden_dim: 7,
            depth: 4,
            output_scale: 1.0,
            ..MapperConfig::default()
        },
        "motion mapper",
    )
}

pub fn visual_mapper() -> Errors {
    let mut out = mapper(
        MapperConfig {
            hidden_dim: 6,
            depth: 3,
            heads: HeadLayout::PerGroup,
            output_scale: 1.0,
            ..MapperConfig::default()
        },
        "visual mapper per-group",
    );
    out.extend(mapper(
        MapperConfig {
            hidden_dim: 6,
            depth: 2,
            broadcast: true,
            output_scale: 1.0,
            ..MapperConfig::default()
        },
        "visual mapper broadcast",
    ));
    out
}

pub fn renderer() -> Errors {
    let renderer = FaceRenderer::new();
    let (h, w) = renderer.resolution();
    let probe = Array3::from_shape_vec((h, w, 3), uniform(&mut rng(50), h * w * 3, -1.0, 1.0)).unwrap();
    [[0.5; NUM_ATTRIBUTES], [0.2, 0.7, 0.35, 0.8], [0.9, 0.15, 0.6, 0.3]]
        .into_iter()
        .map(|a| {
            let g = renderer.render_vjp(&a, &probe).unwrap();
            let mut f = |v: &[f64]| (&renderer.render(v).unwrap().0 * &probe).sum();
            (format!("renderer at {a:?}"), grad_error(&mut f, &a, &g.to_vec(), None, STEP))
        })
        .collect()
}

pub fn synthesizer() -> Errors {
    let cfg = ToyConfig {
        style_dim: 6,
        readout_gain: 3.0,
        ..ToyConfig::default()
    };
    let synth = ToySynthesizer::new(&cfg).unwrap();
    let (h, w) = synth.resolution();
    let probe = Array3::from_shape_vec((h, w, 3), uniform(&mut rng(60), h * w * 3, -1.0, 1.0)).unwrap();
    let (l, d) = (synth.num_layers(), synth.style_dim());
    let x = uniform(&mut rng(61), l * d, -0.3, 0.3);
    let code = |v: &[f64]| WPlusCode(Array2::from_shape_vec((l, d), v.to_vec()).unwrap());
    let g = synth.synthesize_vjp(&code(&x), &probe).unwrap();
    let mut f = |v: &[f64]| (&synth.synthesize(&code(v)).unwrap().0 * &probe).sum();
    vec![("synthesizer".into(), grad_error(&mut f, &x, &g.iter().copied().collect::<Vec<_>>(), None, STEP))]
}

/// Every component-level check: losses, rollouts, mappers and the renderer.
pub fn all() -> Errors {
    let mut out = Errors::new();
    out.extend(w_reg());
    out.extend(path_reg());
    out.extend(alignment());
    out.extend(perceptual());
    out.extend(rollout(1, TrajectoryConfig::train(5)));
    out.extend(rollout(3, TrajectoryConfig::train(5)));
    out.extend(rollout(2, TrajectoryConfig::infer(5, 10)));
    out.extend(motion_mapper());
    out.extend(visual_mapper());
    out.extend(renderer());
    out
}

pub fn assert_within(errors: Errors) {
    for (label, err) in errors {
        assert!(err <= TOL, "{label}: relative error {err}");
    }
}
