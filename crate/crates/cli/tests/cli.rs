use std::path::Path;
use std::process::{Command, Output};

fn textanim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_textanim"))
        .args(args)
        .env_remove("TEXTANIM_BACKEND")
        .env_remove("TEXTANIM_BACKEND_PATH")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("run.toml");
    std::fs::write(
        &path,
        "[train]\nbatch_size = 2\nframes = 3\niterations = 2\ncheckpoint_every = 1\nseed = 5\n",
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

fn trained_checkpoint(dir: &Path) -> String {
    let cfg = small_config(dir);
    let ckpt_dir = dir.join("ckpt");
    let out = textanim(&["train", "--config", &cfg, "--out", ckpt_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let fin = ckpt_dir.join("final.bin");
    assert!(fin.is_file());
    fin.to_str().unwrap().to_string()
}

#[test]
fn check_backend_passes_for_toy() {
    let out = textanim(&["check-backend"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(!out.stdout.is_empty());
}

#[test]
fn contract_violation_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("adapter.toml");
    std::fs::write(&manifest, "factory = \"toy\"\n[expect]\nnum_layers = 17\n").unwrap();
    let sel = format!("external:{}", manifest.display());
    let out = textanim(&["check-backend", "--backend", &sel]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn plugin_path_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("adapter.toml");
    std::fs::write(&manifest, "factory = \"toy\"\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_textanim"))
        .args(["check-backend", "--backend", "external"])
        .env("TEXTANIM_BACKEND_PATH", &manifest)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let out = textanim(&["check-backend", "--backend", "external"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[train]\nbatch_size = 0\n").unwrap();
    let out = textanim(&["check-backend", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("train.batch_size"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&textanim(&["animate"])), 2);
    assert_eq!(code(&textanim(&["no-such-verb"])), 2);
}

#[test]
fn missing_checkpoint_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = textanim(&[
        "animate",
        "--checkpoint",
        dir.path().join("missing.bin").to_str().unwrap(),
        "--sample-seed",
        "1",
        "--text",
        "the face is smiling",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn train_animate_chain_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained_checkpoint(dir.path());

    let anim = dir.path().join("videos").join("smile");
    let out = textanim(&[
        "animate",
        "--checkpoint",
        &ckpt,
        "--sample-seed",
        "3",
        "--text",
        "the face is smiling",
        "--frames",
        "4",
        "--out",
        anim.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for i in 1..=4 {
        assert!(anim.join(format!("frame_{i:04}.png")).is_file());
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(anim.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["frames"].as_array().unwrap().len(), 4);

    let chained = dir.path().join("videos").join("chain");
    let out = textanim(&[
        "chain",
        "--checkpoint",
        &ckpt,
        "--sample-seed",
        "3",
        "--text",
        "the face is smiling",
        "--text",
        "the face is closing eyes",
        "--frames",
        "3",
        "--out",
        chained.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(chained.join("frame_0006.png").is_file());
    assert!(!chained.join("frame_0007.png").exists());

    let report = dir.path().join("report.json");
    let videos = dir.path().join("videos");
    let out = textanim(&[
        "evaluate",
        videos.to_str().unwrap(),
        "--reference",
        videos.to_str().unwrap(),
        "--metrics",
        "fid,acd",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    for key in ["fid", "acd", "n_videos", "n_frames", "embedder"] {
        assert!(!report[key].is_null(), "missing {key} in {report}");
    }
    assert!(report["fid"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn unknown_prompt_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained_checkpoint(dir.path());
    let out = textanim(&[
        "animate",
        "--checkpoint",
        &ckpt,
        "--sample-seed",
        "1",
        "--text",
        "the face is juggling",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn resume_continues_to_a_larger_iteration_count() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained_checkpoint(dir.path());
    let more = dir.path().join("more");
    let out = textanim(&[
        "train",
        "--checkpoint",
        &ckpt,
        "--iterations",
        "3",
        "--out",
        more.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(more.join("final.bin").is_file());
}
