#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const SELECTORS: [&str; 6] = ["random", "top", "top-km", "length-km", "kcenter", "zip"];

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn fx(name: &str) -> String {
    fixtures().join(name).to_string_lossy().into_owned()
}

pub fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

pub fn sift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sift"))
        .args(args)
        .env_remove("SIFT_THREADS")
        .env("RUST_LOG", "")
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> String {
    let out = sift(args);
    assert!(
        out.status.success(),
        "sift {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn golden_path(name: &str) -> PathBuf {
    fixtures().join("golden").join(name)
}

/// corpus + embeddings + log-probs -> difficulty scores + clustered top
/// selection, budget 10. Leaves `ifd.jsonl`, `clusters.bin` and
/// `manifest.json` in `dir`.
pub fn pipeline(dir: &Path) -> Vec<u8> {
    let scores = path(dir, "ifd.jsonl");
    let clusters = path(dir, "clusters.bin");
    let manifest = path(dir, "manifest.json");
    let corpus = fx("pipeline.jsonl");
    ok(&[
        "--log-level", "warn", "score", "--corpus", &corpus, "--format", "pair", "--method", "ifd",
        "--logprobs", &fx("pipeline.logprobs.jsonl"), "--out", &scores,
    ]);
    ok(&[
        "--log-level", "warn", "cluster", "--embeddings", &fx("pipeline.emb"), "-k", "4", "--seed", "17", "--out",
        &clusters,
    ]);
    ok(&[
        "--log-level", "warn", "select", "--corpus", &corpus, "--format", "pair", "--method", "top-km", "--budget",
        "10", "--scores", &scores, "--clusters", &clusters, "--manifest", &manifest,
    ]);
    std::fs::read(&manifest).unwrap()
}

/// Runs one selector over the pipeline fixtures; `dir` must already hold
/// the outputs of [`pipeline`].
pub fn selector_manifest(dir: &Path, method: &str, name: &str) -> Vec<u8> {
    let m = path(dir, name);
    ok(&[
        "--log-level", "warn", "select", "--corpus", &fx("pipeline.jsonl"), "--format", "pair", "--method", method,
        "--budget", "10", "--seed", "4", "--scores", &path(dir, "ifd.jsonl"), "--clusters",
        &path(dir, "clusters.bin"), "--embeddings", &fx("pipeline.emb"), "--k1", "20", "--k2", "10", "--k3", "3",
        "--manifest", &m,
    ]);
    std::fs::read(m).unwrap()
}
