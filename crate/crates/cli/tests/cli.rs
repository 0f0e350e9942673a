//! End-to-end CLI behavior: exit codes, artifact determinism, config
//! validation, and the synth -> train -> eval -> summarize chain on a tiny
//! dataset.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cytophen"))
}

fn tmp(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cytophen-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = bin().args(["synth", "--frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("frobnicate"), "{stderr}");
}

#[test]
fn eval_without_checkpoint_is_usage_error() {
    let out = bin().args(["eval"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.to_lowercase().contains("checkpoint"), "{stderr}");
}

#[test]
fn unknown_config_key_is_usage_error() {
    let dir = tmp("badcfg");
    let cfg = write_config(&dir, "[train]\nepochz = 5\n");
    let out = bin()
        .args(["synth", "--config", cfg.to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("epochz"), "{stderr}");
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn synth_same_seed_identical_artifact_hashes() {
    let dir = tmp("synth-det");
    let cfg = write_config(&dir, "[synth]\nn_train = 6\nn_val = 2\nn_test = 4\n");
    for sub in ["a", "b"] {
        let out = bin()
            .args([
                "synth",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                dir.join(sub).to_str().unwrap(),
                "--seed",
                "7",
                "--n",
                "6",
            ])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = fs::read_to_string(dir.join("a/artifacts.json")).unwrap();
    let b = fs::read_to_string(dir.join("b/artifacts.json")).unwrap();
    assert_eq!(a, b);
    // And a different seed changes the hashes.
    let out = bin()
        .args([
            "synth",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.join("c").to_str().unwrap(),
            "--seed",
            "8",
            "--n",
            "6",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let c = fs::read_to_string(dir.join("c/artifacts.json")).unwrap();
    assert_ne!(a, c);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn full_chain_synth_train_eval_summarize_export() {
    let dir = tmp("chain");
    let cfg_body = format!(
        r#"
[data]
container = "{data}"

[synth]
n_train = 8
n_val = 3
n_test = 5
seed = 3

[train]
epochs = 2
batch_size = 8
seed = 3
augment = false
"#,
        data = dir.join("synth/dataset").display()
    );
    let cfg = write_config(&dir, &cfg_body);
    let cfg_s = cfg.to_str().unwrap();

    let synth = bin()
        .args(["synth", "--config", cfg_s, "--out", dir.join("synth").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(synth.status.code(), Some(0), "{}", String::from_utf8_lossy(&synth.stderr));

    let train = bin()
        .args(["train", "--config", cfg_s, "--out", dir.join("train").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(train.status.code(), Some(0), "{}", String::from_utf8_lossy(&train.stderr));
    assert!(dir.join("train/checkpoint-best.bin").exists());
    assert!(dir.join("train/trainlog.json").exists());
    assert!(dir.join("train/timing.json").exists());

    let ckpt = dir.join("train/checkpoint-best");
    let eval = bin()
        .args([
            "eval",
            "--config",
            cfg_s,
            "--out",
            dir.join("eval").to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--split",
            "test",
        ])
        .output()
        .unwrap();
    assert_eq!(eval.status.code(), Some(0), "{}", String::from_utf8_lossy(&eval.stderr));
    for artifact in ["report.json", "confusion.csv", "classification.csv", "markers.csv", "roc.csv", "evidence.json"] {
        assert!(dir.join("eval").join(artifact).exists(), "{artifact} missing");
    }

    let summarize = bin()
        .args([
            "summarize",
            "--out",
            dir.join("summary").to_str().unwrap(),
            "--evidence",
            dir.join("eval/evidence.json").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(summarize.status.code(), Some(0), "{}", String::from_utf8_lossy(&summarize.stderr));
    let summary = fs::read_to_string(dir.join("summary/summary.txt")).unwrap();
    assert!(summary.contains("cells"), "{summary}");

    let export = bin()
        .args([
            "export-figures",
            "--config",
            cfg_s,
            "--out",
            dir.join("figs").to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(export.status.code(), Some(0), "{}", String::from_utf8_lossy(&export.stderr));
    let scatter = fs::read_to_string(dir.join("figs/scatter.csv")).unwrap();
    assert!(scatter.lines().count() > 15 * 4, "scatter rows: {}", scatter.lines().count());
    assert!(dir.join("figs/distributions.csv").exists());

    // Train determinism via artifact hashes: same seed, same artifacts.
    let train2 = bin()
        .args(["train", "--config", cfg_s, "--out", dir.join("train2").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(train2.status.code(), Some(0));
    let a = fs::read_to_string(dir.join("train/artifacts.json")).unwrap();
    let b = fs::read_to_string(dir.join("train2/artifacts.json")).unwrap();
    assert_eq!(a, b, "same config + seed must give identical training artifacts");

    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn eval_on_missing_container_is_runtime_error() {
    let dir = tmp("nodata");
    let cfg = write_config(&dir, "[data]\ncontainer = \"/nonexistent/path\"\n");
    let out = bin()
        .args([
            "eval",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.join("out").to_str().unwrap(),
            "--checkpoint",
            "/nonexistent/checkpoint",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    fs::remove_dir_all(&dir).unwrap();
}
