use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use burstkit::train::MetricReport;

fn burstkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_burstkit"))
        .args(args)
        .env("BURSTKIT_THREADS", "1")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = burstkit(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn generate(dir: &Path, seed: &str) {
    ok(&[
        "generate", "--count", "2", "--out", s(dir), "--seed", seed, "--burst-size", "3", "--scale", "1", "--patch",
        "8", "--noise", "gain2",
    ]);
}

fn train_tiny(data: &Path, out: &Path, steps: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "train", "--data", s(data), "--out", s(out), "--steps", steps, "--channels", "4", "--levels", "2", "--heads",
        "1", "--offset-groups", "1", "--seed", "3",
    ];
    args.extend_from_slice(extra);
    burstkit(&args)
}

#[test]
fn generate_is_byte_reproducible() {
    let root = tempfile::tempdir().unwrap();
    let (a, b, c) = (root.path().join("a"), root.path().join("b"), root.path().join("c"));
    generate(&a, "4");
    generate(&b, "4");
    generate(&c, "5");
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.len(), 1 + 2 * 3);
    assert_eq!(ta, tb);
    assert_ne!(ta, tree(&c));
}

#[test]
fn train_eval_infer_and_dump_round_trip() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let ck = root.path().join("ck");
    generate(&data, "1");
    let t = train_tiny(&data, &ck, "2", &[]);
    assert!(t.status.success(), "{}", String::from_utf8_lossy(&t.stderr));
    assert!(ck.join("manifest.json").exists() && ck.join("loss.csv").exists());

    let gt = ok(&["eval", "--data", s(&data), "--predictor", "ground-truth", "--border", "2"]);
    let report: MetricReport = serde_json::from_slice(&gt.stdout).unwrap();
    assert!(report.saturated);
    assert!((report.ssim - 1.0).abs() < 1e-12);

    let report_path = root.path().join("report.json");
    ok(&["eval", "--data", s(&data), "--checkpoint", s(&ck), "--out", s(&report_path), "--border", "2"]);
    let report: MetricReport = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report.predictor, "model");
    assert_eq!(report.train_steps, Some(2));
    assert_eq!(report.samples.len(), 2);
    assert!(report.psnr_db.is_finite());

    let png = root.path().join("out.png");
    let raw = root.path().join("out.bkt");
    let sample = data.join("sample_00000");
    ok(&["infer", "--checkpoint", s(&ck), "--input", s(&sample), "--out", s(&png), "--raw-out", s(&raw)]);
    let img = image::open(&png).unwrap();
    assert_eq!((img.width(), img.height()), (16, 16));
    let pred: burstkit::tensor::Tensor<f64> = burstkit::tensor::io::read_tensor(&raw).unwrap();
    assert_eq!(pred.shape(), [1, 3, 16, 16]);

    let dump = root.path().join("dump");
    ok(&["dump-features", "--checkpoint", s(&ck), "--input", s(&sample), "--out", s(&dump)]);
    let pngs = fs::read_dir(&dump)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    // Three frames before and after alignment, two ladder levels in each stage.
    assert_eq!(pngs, 2 * 3 + 2 + 2);
    for stem in ["mbfa_in", "mbfa_out", "ur_x1", "ur_x2", "us_x1", "us_x2"] {
        assert!(dump.join(format!("{stem}.bkt")).exists(), "{stem}");
    }
    assert!(dump.join("manifest.json").exists());
}

#[test]
fn exit_codes() {
    assert_eq!(burstkit(&["--help"]).status.code(), Some(0));
    assert_eq!(burstkit(&["generate", "--count"]).status.code(), Some(2));
    assert_eq!(burstkit(&["frobnicate"]).status.code(), Some(2));

    let root = tempfile::tempdir().unwrap();
    let missing = root.path().join("missing");
    let e = burstkit(&["eval", "--data", s(&missing), "--predictor", "bilinear"]);
    assert_eq!(e.status.code(), Some(3));
    assert!(!e.stderr.is_empty());

    let data = root.path().join("data");
    generate(&data, "0");
    let e = burstkit(&["eval", "--data", s(&data)]);
    assert_eq!(e.status.code(), Some(2), "model predictor needs a checkpoint");
    let e = train_tiny(&data, &root.path().join("bad"), "2", &["--ablation", "no-tafm"]);
    assert_eq!(e.status.code(), Some(2));

    let e = train_tiny(
        &data,
        &root.path().join("nan"),
        "50",
        &["--lr", "1e12", "--min-lr", "1e12", "--no-clip"],
    );
    assert_eq!(e.status.code(), Some(4), "{}", String::from_utf8_lossy(&e.stderr));
    assert!(root.path().join("nan/manifest.json").exists());
}
