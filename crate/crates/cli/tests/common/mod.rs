//! Helpers shared by the CLI test targets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use glioseg::dataset::{ImageSample, Label};
use glioseg::raster;
use glioseg::synthetic;

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_glioseg"));
    cmd.env_remove(glioseg_cli::record::WORKERS_ENV);
    cmd
}

/// Runs the binary with `args`, returning its output.
pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp paths")
}

fn write_sample(root: &Path, dir: &str, s: &ImageSample) {
    let rel = PathBuf::from(dir).join(format!("{}.png", s.id));
    raster::write_gray_png(&s.pixels, 255.0, &root.join(&rel)).unwrap();
    if let Some(m) = &s.mask {
        raster::write_mask_png(m, &root.join("masks").join(&rel)).unwrap();
    }
}

/// A yes/no dataset of `per_class` disk slices (with tumor masks) and
/// `per_class` blank slices at `side`.
pub fn synthetic_dataset(root: &Path, per_class: usize, side: usize, seed: u64) {
    for s in synthetic::disk_segmentation_set(per_class, side, seed) {
        write_sample(root, "yes", &s);
    }
    for s in synthetic::blob_classification_set(per_class, side, seed + 1)
        .into_iter()
        .filter(|s| s.label == Label::Normal)
    {
        write_sample(root, "no", &s);
    }
}

/// Files produced by [`smoke_pipeline`] that must be reproducible.
pub struct SmokeArtifacts {
    pub manifest: PathBuf,
    pub preprocessed_manifest: PathBuf,
    pub report: PathBuf,
    pub masks: Vec<PathBuf>,
    pub plot: PathBuf,
}

/// ingest → preprocess → train (micro-UNet, 5 epochs) → evaluate → report
/// → segment, all under `dir`, on a 32×32 synthetic dataset.
pub fn smoke_pipeline(dir: &Path) -> SmokeArtifacts {
    let data = dir.join("data");
    synthetic_dataset(&data, 8, 32, 21);
    let manifest = dir.join("manifest.json");
    run_ok(&["ingest", "--data-dir", p(&data), "--out", p(&manifest), "--seed", "7"]);

    let pre = dir.join("pre");
    run_ok(&["preprocess", "--manifest", p(&manifest), "--out", p(&pre), "--side", "32"]);
    let pre_manifest = pre.join("manifest.json");

    let config = dir.join("train.json");
    std::fs::write(&config, r#"{"epochs": 5, "batch_size": 4, "learning_rate": 0.003, "seed": 5}"#).unwrap();
    let run_dir = dir.join("run");
    run_ok(&[
        "train", "--arch", "unet", "--task", "segment", "--config", p(&config), "--manifest", p(&pre_manifest),
        "--out", p(&run_dir), "--side", "32", "--base", "8", "--depth", "2",
    ]);

    let eval = dir.join("eval");
    let ckpt = run_dir.join("model.ckpt");
    run_ok(&[
        "evaluate", "--checkpoint", p(&ckpt), "--manifest", p(&pre_manifest), "--split", "test", "--out", p(&eval),
    ]);
    let report = eval.join("report.json");
    let report_dir = dir.join("report");
    run_ok(&[
        "report", "--history", p(&run_dir.join("history.csv")), "--metrics", p(&report), "--out", p(&report_dir),
    ]);

    let image = pre.join("yes/disk_000.png");
    let seg = dir.join("seg");
    let masks = vec![seg.join("model_mask.png"), seg.join("kmeans_mask.png"), seg.join("kmeans_tumor.png")];
    run_ok(&[
        "segment", "--method", "model", "--checkpoint", p(&ckpt), "--image", p(&image), "--mask", p(&masks[0]),
        "--overlay", p(&seg.join("model_overlay.png")),
    ]);
    run_ok(&[
        "segment", "--method", "kmeans", "--k", "4", "--image", p(&image), "--mask", p(&masks[1]), "--tumor-mask",
        p(&masks[2]), "--overlay", p(&seg.join("kmeans_overlay.png")), "--min-area", "10",
    ]);
    SmokeArtifacts {
        manifest,
        preprocessed_manifest: pre_manifest,
        report,
        masks,
        plot: report_dir.join("history.png"),
    }
}
