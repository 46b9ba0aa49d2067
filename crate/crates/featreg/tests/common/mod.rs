#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn featreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_featreg"))
        .args(args)
        .output()
        .expect("spawn featreg")
}

/// Runs the binary and fails with its stderr on a non-zero exit.
pub fn featreg_ok(args: &[&str]) -> Output {
    let out = featreg(args);
    assert!(
        out.status.success(),
        "featreg {args:?} exited with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// Small synthetic case written into `dir`.
pub fn synth_small(dir: &Path, seed: u64) -> PathBuf {
    let seed = seed.to_string();
    featreg_ok(&[
        "--threads", "1", "synth", "--out-dir", p(dir), "--seed", &seed, "--dims", "32,32,32", "--amplitude", "4",
        "--smoothness", "8", "--n-blobs", "4",
    ]);
    dir.to_owned()
}

/// Manifest JSON with the wall-clock timings removed.
pub fn manifest_without_timings(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("timings_ms");
    v
}
