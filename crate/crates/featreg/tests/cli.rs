mod common;

use std::fs;

use common::{featreg, featreg_ok, manifest_without_timings, p, synth_small};
use featreg::{fvb, nifti};

#[test]
fn full_workflow_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let d = synth_small(&tmp.path().join("case"), 3);
    for name in ["fix.nii", "mov.nii", "fix_labels.nii", "mov_labels.nii", "truth_disp.nii", "synth.json"] {
        assert!(d.join(name).is_file(), "{name}");
    }
    let out = tmp.path().join("reg");
    featreg_ok(&[
        "--threads", "1", "register", "--fix", p(&d.join("fix.nii")), "--mov", p(&d.join("mov.nii")), "--out-dir",
        p(&out), "--refine-iters", "20",
    ]);
    let disp = nifti::read_field(&fs::read(out.join("disp.nii")).unwrap()).unwrap();
    assert_eq!(disp.dims().as_array(), [32, 32, 32]);

    let trace: serde_json::Value = serde_json::from_slice(&fs::read(out.join("trace.json")).unwrap()).unwrap();
    let totals: Vec<f64> = trace.as_array().unwrap().iter().map(|r| r["total"].as_f64().unwrap()).collect();
    assert!(!totals.is_empty() && totals.len() <= 21);
    assert!(totals.windows(2).all(|w| w[1] <= w[0]));

    let manifest = manifest_without_timings(&out.join("manifest.json"));
    assert_eq!(manifest["command"], "register");
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 3);
    let projection: serde_json::Value = serde_json::from_slice(&fs::read(out.join("projection.json")).unwrap()).unwrap();
    assert_eq!(projection["input_dim"], 20);
    assert_eq!(manifest["config"]["registration"]["refine_iters"], 20);

    featreg_ok(&[
        "warp", "--input", p(&d.join("mov_labels.nii")), "--disp", p(&out.join("disp.nii")), "--out",
        p(&out.join("warped_labels.nii")), "--labels",
    ]);
    let warped = nifti::read_labels(&fs::read(out.join("warped_labels.nii")).unwrap()).unwrap();
    let mov = nifti::read_labels(&fs::read(d.join("mov_labels.nii")).unwrap()).unwrap();
    assert!(warped.data().iter().all(|l| mov.data().contains(l)));

    featreg_ok(&[
        "evaluate", "--fix-labels", p(&d.join("fix_labels.nii")), "--mov-labels", p(&d.join("mov_labels.nii")),
        "--disp", p(&out.join("disp.nii")), "--out-dir", p(&out),
    ]);
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("case,label,dice,hd95_mm,sdlogj,folding_fraction"));
    assert!(csv.lines().any(|l| l.starts_with("initial,mean,")));
    assert!(csv.lines().any(|l| l.starts_with("registered,mean,")));
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
    let (before, after) = (
        metrics["initial"]["mean_dice"].as_f64().unwrap(),
        metrics["registered"]["mean_dice"].as_f64().unwrap(),
    );
    assert!(after > before, "{before} -> {after}");

    for (mode, b) in [("checker", Some("fix.nii")), ("diff", Some("fix.nii")), ("logj", None)] {
        let pgm = out.join(format!("{mode}.pgm"));
        let a = if mode == "logj" { out.join("disp.nii") } else { d.join("mov.nii") };
        let b = b.map(|n| d.join(n));
        let mut args = vec!["montage", "--mode", mode, "--a", p(&a), "--out", p(&pgm)];
        if let Some(b) = &b {
            args.extend(["--b", p(b)]);
        }
        featreg_ok(&args);
        assert!(fs::read(&pgm).unwrap().starts_with(b"P5\n"));
    }
}

#[test]
fn extract_writes_strided_mask() {
    let tmp = tempfile::tempdir().unwrap();
    let d = synth_small(tmp.path(), 4);
    let fvb_path = tmp.path().join("fix.fvb");
    featreg_ok(&["extract", "--input", p(&d.join("fix.nii")), "--out", p(&fvb_path), "--stride", "3"]);
    let bytes = fs::read(&fvb_path).unwrap();
    let h = fvb::read_header(&bytes).unwrap();
    assert_eq!((h.depth, h.grid_w, h.grid_h, h.stride_k), (32, 16, 16, 3));
    let encoded: Vec<usize> = (0..32).filter(|&z| h.encoded_mask[z]).collect();
    let mut want: Vec<usize> = (0..32).step_by(3).collect();
    want.push(31);
    assert_eq!(encoded, want);

    // `--encoder file` validates and passes the stack through unchanged.
    let copy = tmp.path().join("copy.fvb");
    featreg_ok(&[
        "extract", "--input", p(&d.join("fix.nii")), "--out", p(&copy), "--encoder", "file", "--from", p(&fvb_path),
    ]);
    assert_eq!(fs::read(&copy).unwrap(), bytes);
}

#[test]
fn register_accepts_precomputed_features() {
    let tmp = tempfile::tempdir().unwrap();
    let d = synth_small(tmp.path(), 5);
    for v in ["fix", "mov"] {
        featreg_ok(&[
            "extract", "--input", p(&d.join(format!("{v}.nii"))), "--out", p(&tmp.path().join(format!("{v}.fvb"))),
            "--stride", "2",
        ]);
    }
    let out = tmp.path().join("reg");
    featreg_ok(&[
        "register", "--fix", p(&d.join("fix.nii")), "--mov", p(&d.join("mov.nii")), "--fix-feat",
        p(&tmp.path().join("fix.fvb")), "--mov-feat", p(&tmp.path().join("mov.fvb")), "--out-dir", p(&out),
        "--refine-iters", "5",
    ]);
    let manifest = manifest_without_timings(&out.join("manifest.json"));
    let roles: Vec<&str> = manifest["inputs"].as_array().unwrap().iter().map(|r| r["role"].as_str().unwrap()).collect();
    assert_eq!(roles, ["fix", "mov", "fix_feat", "mov_feat"]);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.nii");
    let code = |args: &[&str]| featreg(args).status.code();

    // Input errors.
    assert_eq!(code(&["warp", "--input", p(&missing), "--disp", p(&missing), "--out", p(&missing)]), Some(2));
    assert_eq!(code(&["register", "--fix", "a.nii"]), Some(2));
    assert_eq!(code(&["--threads", "0", "synth", "--out-dir", p(tmp.path())]), Some(2));
    let junk = tmp.path().join("junk.nii");
    fs::write(&junk, b"not a nifti file").unwrap();
    let out = featreg(&["extract", "--input", p(&junk), "--out", p(&tmp.path().join("x.fvb"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("junk.nii"));

    // A fold-free field cannot be drawn at this amplitude.
    let out = featreg(&["synth", "--out-dir", p(tmp.path()), "--dims", "16,16,16", "--amplitude", "500", "--smoothness", "2"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn threads_one_runs_are_bitwise_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = synth_small(&tmp.path().join("a"), 9);
    let b = synth_small(&tmp.path().join("b"), 9);
    for f in ["fix.nii", "mov.nii", "fix_labels.nii", "mov_labels.nii", "truth_disp.nii"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let (out, fix, mov) = (tmp.path().join("reg"), a.join("fix.nii"), a.join("mov.nii"));
    let args = [
        "--threads", "1", "register", "--fix", p(&fix), "--mov", p(&mov), "--out-dir",
        p(&out), "--refine-iters", "10", "--stride", "2",
    ];
    featreg_ok(&args);
    let first: Vec<Vec<u8>> = ["disp.nii", "trace.json"].iter().map(|f| fs::read(out.join(f)).unwrap()).collect();
    let first_manifest = manifest_without_timings(&out.join("manifest.json"));
    featreg_ok(&args);
    for (f, bytes) in ["disp.nii", "trace.json"].iter().zip(&first) {
        assert_eq!(&fs::read(out.join(f)).unwrap(), bytes, "{f}");
    }
    assert_eq!(manifest_without_timings(&out.join("manifest.json")), first_manifest);
}
