#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub fn weaklearn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_weaklearn")).args(args).output().expect("binary runs")
}

/// Runs and parses the single JSON line on stdout; panics with stderr on failure.
pub fn json(args: &[&str]) -> serde_json::Value {
    let out = weaklearn(args);
    assert!(
        out.status.success(),
        "{args:?} failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1, "stdout: {stdout}");
    serde_json::from_str(&stdout).unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub struct PipelineRun {
    pub checkpoint: Vec<u8>,
    pub metrics: serde_json::Value,
    pub train: serde_json::Value,
}

/// gen-synth → build-dict → train → eval-words in `dir`.
pub fn pipeline(dir: &Path, seed: &str, n: &str, max_epochs: &str) -> PipelineRun {
    let data = dir.join("data");
    let out = dir.join("run");
    json(&["gen-synth", "--k", "10", "--img-size", "6", "--n", n, "--seed", seed, "--out-dir", s(&data)]);
    json(&["build-dict", "--data-dir", s(&data), "--k", "10"]);
    let train = json(&[
        "train",
        "--data-dir",
        s(&data),
        "--out-dir",
        s(&out),
        "--seed",
        seed,
        "--epoch-size",
        "500",
        "--max-epochs",
        max_epochs,
    ]);
    let ckpt = out.join("checkpoint.wlck");
    let metrics = json(&["eval-words", "--ckpt", s(&ckpt), "--data", s(&data), "--k", "1", "--split", "val"]);
    PipelineRun { checkpoint: std::fs::read(&ckpt).unwrap(), metrics, train }
}
