//! Trainer, optimizer and checkpoint behaviour on a reduced toy setup.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use textanim::backend::Backends;
use textanim::config::Config;
use textanim::error::Error;
use textanim::loss::LossWeights;
use textanim::params::Parameters;
use textanim::train::{checkpoint_path, fit, sample_batch, Checkpoint, ContentDraw, FitOptions, Trainer};

fn small_config() -> Config {
    let mut cfg = Config::default();
    cfg.toy.style_dim = 16;
    cfg.toy.embed_dim = 16;
    cfg.train.hidden_dim = 16;
    cfg.train.frames = 6;
    cfg.mapper.hidden_dim = 32;
    cfg
}

fn trainer(cfg: &Config) -> Trainer {
    Trainer::new(cfg.clone(), Backends::toy(&cfg.toy).unwrap()).unwrap()
}

fn bits(t: &Trainer) -> Vec<u64> {
    t.model.flatten().into_iter().map(f64::to_bits).collect()
}

#[test]
fn batches_have_distinct_prompts() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let batch = sample_batch(8, 4, None, &mut rng).unwrap();
        let mut prompts: Vec<usize> = batch.iter().map(|b| b.prompt).collect();
        prompts.sort_unstable();
        prompts.dedup();
        assert_eq!(prompts.len(), 4);
        assert!(batch.iter().all(|b| matches!(b.content, ContentDraw::Seed(_))));
    }
    let batch = sample_batch(8, 8, Some(3), &mut rng).unwrap();
    assert!(batch.iter().all(|b| matches!(b.content, ContentDraw::Image(i) if i < 3)));
}

#[test]
fn impossible_batches_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    assert!(matches!(sample_batch(3, 4, None, &mut rng), Err(Error::InvalidArgument(_))));
    assert!(matches!(sample_batch(8, 0, None, &mut rng), Err(Error::InvalidArgument(_))));
    assert!(matches!(sample_batch(8, 2, Some(0), &mut rng), Err(Error::InvalidArgument(_))));
}

proptest! {
    #[test]
    fn batch_prompts_are_in_range_and_distinct(seed in any::<u64>(), vocab in 1usize..16, frac in 0.0f64..1.0) {
        let n = 1 + ((vocab - 1) as f64 * frac) as usize;
        let batch = sample_batch(vocab, n, None, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut prompts: Vec<usize> = batch.iter().map(|b| b.prompt).collect();
        prop_assert!(prompts.iter().all(|&p| p < vocab));
        prompts.sort_unstable();
        prompts.dedup();
        prop_assert_eq!(prompts.len(), n);
    }
}

#[test]
fn forward_produces_one_video_per_pair() {
    let mut cfg = Config::default();
    cfg.train.batch_size = 2;
    cfg.train.frames = 3;
    let t = trainer(&cfg);
    let out = t.forward_pass(&t.batch_at(0).unwrap()).unwrap();
    assert_eq!(out.frames.len(), 2);
    for video in &out.frames {
        assert_eq!(video.len(), 3);
        for f in video {
            assert_eq!(f.0.dim(), (64, 64, 3));
        }
    }
    assert_eq!(out.last_frame_embeddings.len(), 2);
}

#[test]
fn zero_parameters_keep_every_frame_at_the_content_code() {
    let mut t = trainer(&small_config());
    let zeros = vec![0.0; t.model.flatten().len()];
    t.model.assign_flat(&zeros).unwrap();
    let out = t.forward_pass(&t.batch_at(0).unwrap()).unwrap();
    for (codes, anchor) in out.codes.iter().zip(&out.anchors) {
        assert!(codes.iter().all(|c| c == anchor));
    }
}

#[test]
fn training_is_deterministic_and_thread_independent() {
    let mut cfg = small_config();
    cfg.train.iterations = 3;
    let mut a = trainer(&cfg);
    let mut b = trainer(&cfg);
    fit(&mut a, FitOptions::default()).unwrap();
    fit(&mut b, FitOptions::default()).unwrap();
    assert_eq!(bits(&a), bits(&b));

    cfg.train.parallel = false;
    let mut c = trainer(&cfg);
    fit(&mut c, FitOptions::default()).unwrap();
    assert_eq!(bits(&a), bits(&c));
}

#[test]
fn zero_loss_weights_leave_parameters_unchanged() {
    let mut cfg = small_config();
    cfg.loss = LossWeights {
        w_reg: 0.0,
        path_reg: 0.0,
        cont: 0.0,
        lpips: 0.0,
        ..LossWeights::default()
    };
    cfg.train.iterations = 2;
    let mut t = trainer(&cfg);
    let before = bits(&t);
    let out = fit(&mut t, FitOptions::default()).unwrap();
    assert_eq!(before, bits(&t));
    assert!(out.history.iter().all(|l| l.total == 0.0 && l.grad_norm == 0.0));
}

#[test]
fn synthesizer_stays_frozen() {
    let mut cfg = small_config();
    cfg.train.iterations = 3;
    let mut t = trainer(&cfg);
    let before = t.backends.synthesizer.parameter_checksum();
    let out = fit(&mut t, FitOptions::default()).unwrap();
    assert_eq!(before, t.backends.synthesizer.parameter_checksum());
    assert_eq!(before, out.checkpoint.synthesizer_checksum);
}

#[test]
fn loss_decreases_over_training() {
    let mut cfg = small_config();
    cfg.train.iterations = 200;
    let mut t = trainer(&cfg);
    let out = fit(&mut t, FitOptions::default()).unwrap();
    let mean = |s: &[textanim::train::LossBreakdown]| s.iter().map(|l| l.total).sum::<f64>() / s.len() as f64;
    let (early, late) = (mean(&out.history[..20]), mean(&out.history[180..]));
    assert!(late < early, "early {early}, late {late}");
    assert!(out.history.iter().all(|l| l.grad_norm.is_finite()));
}

#[test]
fn checkpoint_round_trips_and_rejects_other_versions() {
    let mut cfg = small_config();
    cfg.train.iterations = 2;
    let mut t = trainer(&cfg);
    fit(&mut t, FitOptions::default()).unwrap();
    let ckpt = t.checkpoint();
    let bytes = ckpt.to_bytes().unwrap();
    assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ckpt);

    let mut other = bytes.clone();
    other[8..12].copy_from_slice(&99u32.to_le_bytes());
    match Checkpoint::from_bytes(&other) {
        Err(Error::Checkpoint(m)) => assert!(m.contains("99"), "{m}"),
        r => panic!("expected a version error, got {r:?}"),
    }
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn zero_iterations_writes_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.train.iterations = 0;
    let mut t = trainer(&cfg);
    let before = bits(&t);
    let out = fit(
        &mut t,
        FitOptions {
            checkpoint_dir: Some(dir.path().to_path_buf()),
            on_step: None,
        },
    )
    .unwrap();
    assert!(out.history.is_empty());
    assert_eq!(before, bits(&t));
    let saved = Checkpoint::load(dir.path().join("final.bin")).unwrap();
    assert_eq!(saved.iteration, 0);
}

#[test]
fn periodic_checkpoints_follow_the_cadence() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.train.iterations = 5;
    cfg.train.checkpoint_every = 2;
    let mut t = trainer(&cfg);
    fit(
        &mut t,
        FitOptions {
            checkpoint_dir: Some(dir.path().to_path_buf()),
            on_step: None,
        },
    )
    .unwrap();
    for i in [2, 4] {
        assert_eq!(Checkpoint::load(checkpoint_path(dir.path(), i)).unwrap().iteration, i);
    }
    assert!(!checkpoint_path(dir.path(), 5).exists());
    assert_eq!(Checkpoint::load(dir.path().join("final.bin")).unwrap().iteration, 5);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let mut cfg = small_config();
    cfg.train.iterations = 6;
    cfg.train.parallel = false;
    let mut straight = trainer(&cfg);
    fit(&mut straight, FitOptions::default()).unwrap();

    let mut half = cfg.clone();
    half.train.iterations = 3;
    let mut first = trainer(&half);
    fit(&mut first, FitOptions::default()).unwrap();
    let bytes = first.checkpoint().to_bytes().unwrap();
    let backends = Backends::toy(&cfg.toy).unwrap();
    let mut resumed = Trainer::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap(), backends).unwrap();
    resumed.config.train.iterations = 6;
    fit(&mut resumed, FitOptions::default()).unwrap();
    assert_eq!(bits(&straight), bits(&resumed));
    assert_eq!(resumed.iteration, 6);
}

#[test]
fn parameters_flatten_and_assign_round_trip() {
    let mut t = trainer(&small_config());
    let flat = t.model.flatten();
    let shifted: Vec<f64> = flat.iter().map(|v| v + 1.0).collect();
    t.model.assign_flat(&shifted).unwrap();
    assert_eq!(t.model.flatten(), shifted);
    assert!(t.model.assign_flat(&shifted[1..]).is_err());
}
