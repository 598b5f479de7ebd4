//! Acceptance suite: one pass/fail line per criterion, non-zero exit on any
//! failure. Runs without the libtest harness so every criterion reports even
//! when an earlier one fails.

mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use glioseg::augment::{flip_horizontal, rotate, sample_and_apply, scale, shear, AugmentConfig};
use glioseg::classical_seg::{extract_tumor_mask, kmeans, kmeans_segment, SegmentConfig};
use glioseg::dataset::{ImageSample, Label};
use glioseg::evaluation::{self, dice, evaluate_samples, ConfusionMatrix};
use glioseg::models::{Arch, Model, ModelSpec, Task};
use glioseg::raster::{Grid, SegmentationMask};
use glioseg::synthetic::{blob_classification_set, disk_image, disk_segmentation_set};
use glioseg::training::{checkpoint, Phase, TrainConfig, Trainer};
use glioseg_nn::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok { Ok(()) } else { Err(msg.into()) }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_batch(n: usize, side: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * side * side).map(|_| rng.random::<f64>()).collect();
    Tensor::from_vec(&[n, 1, side, side], data).unwrap()
}

fn quiet(epochs: usize, batch_size: usize, learning_rate: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size,
        learning_rate,
        augment: AugmentConfig::identity(),
        ..TrainConfig::default()
    }
}

fn golden_metrics() -> Outcome {
    let cm = ConfusionMatrix::new(1185, 11, 56, 70);
    let tol = 5e-5;
    let checks = [
        ("accuracy", evaluation::accuracy(&cm).map_err(err)?, 0.90469),
        ("precision", evaluation::precision(&cm).map_err(err)?, 0.95487),
        ("sensitivity", evaluation::sensitivity(&cm).map_err(err)?, 0.94422),
        ("f1", evaluation::f1(&cm).map_err(err)?, 0.94952),
    ];
    let mut detail = Vec::new();
    for (name, got, want) in checks {
        ensure((got - want).abs() <= tol, format!("{name} {got:.6} vs {want} ± {tol}"))?;
        detail.push(format!("{name} {got:.5}"));
    }
    Ok(detail.join(", "))
}

fn f1_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 1000 {
        let [tp, tn, fp, fn_] = [0; 4].map(|_| rng.random_range(0..10_000u64));
        let cm = ConfusionMatrix::new(tp, tn, fp, fn_);
        let (Ok(p), Ok(s), Ok(f)) = (evaluation::precision(&cm), evaluation::sensitivity(&cm), evaluation::f1(&cm))
        else {
            continue;
        };
        if p + s == 0.0 {
            continue;
        }
        worst = worst.max((f - 2.0 * p * s / (p + s)).abs());
        checked += 1;
    }
    ensure(worst <= 1e-12, format!("max deviation {worst:e}"))?;
    Ok(format!("1000 quadruples, max deviation {worst:e}"))
}

fn classification_overfit() -> Outcome {
    let mut detail = Vec::new();
    for arch in [Arch::Unet, Arch::Deeplabv3] {
        let start = Instant::now();
        let data = blob_classification_set(8, 32, 3);
        let model = Model::build(ModelSpec::micro(arch, Task::Classify, 2, 8, 32), 1).map_err(err)?;
        let mut t = Trainer::new(model, data.clone(), data, quiet(200, 16, 1e-3), Phase::Train).map_err(err)?;
        let mut reached = None;
        for epoch in 1..=200 {
            if t.run_epoch().map_err(err)?.train_acc == 1.0 {
                reached = Some(epoch);
                break;
            }
        }
        let elapsed = start.elapsed();
        let epoch = reached.ok_or(format!("{arch:?} did not reach accuracy 1.0 in 200 epochs"))?;
        ensure(elapsed < Duration::from_secs(300), format!("{arch:?} took {elapsed:?}"))?;
        detail.push(format!("{arch:?} epoch {epoch} in {:.1}s", elapsed.as_secs_f64()));
    }
    Ok(detail.join(", "))
}

fn segmentation_overfit() -> Outcome {
    let start = Instant::now();
    let data = disk_segmentation_set(8, 32, 1);
    let model = Model::build(ModelSpec::micro(Arch::Unet, Task::Segment, 2, 8, 32), 1).map_err(err)?;
    let mut t = Trainer::new(model, data.clone(), data.clone(), quiet(300, 8, 3e-3), Phase::Train).map_err(err)?;
    let mut best = 0.0f64;
    for epoch in 1..=300 {
        t.run_epoch().map_err(err)?;
        let d = evaluate_samples(t.model(), &data, 0.5).map_err(err)?.dice.unwrap_or(0.0);
        best = best.max(d);
        if d >= 0.95 {
            let elapsed = start.elapsed();
            ensure(elapsed < Duration::from_secs(600), format!("took {elapsed:?}"))?;
            return Ok(format!("dice {d:.4} at epoch {epoch} in {:.1}s", elapsed.as_secs_f64()));
        }
    }
    Err(format!("best dice {best:.4} after 300 epochs"))
}

fn gradient_check() -> Outcome {
    let mut worst = 0.0f64;
    for (arch, task) in [(Arch::Unet, Task::Segment), (Arch::Unet, Task::Classify)] {
        let mut model = Model::build(ModelSpec::micro(arch, task, 1, 2, 16), 21).map_err(err)?;
        let batch = random_batch(2, 16, 22);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let seg_targets: Vec<usize> = (0..2 * 16 * 16).map(|_| rng.random_range(0..4)).collect();
        let cls_targets = Tensor::from_vec(&[2, 1], vec![1.0, 0.0]).unwrap();
        let loss_of = |m: &Model, with_grads: bool| -> Result<(f64, Option<glioseg_nn::Grads>), String> {
            let mut g = Graph::new(&m.params);
            let x = g.input(batch.clone());
            let y = m.forward_graph(&mut g, x).map_err(err)?;
            let loss = match task {
                Task::Segment => g.softmax_cross_entropy(y, &seg_targets),
                Task::Classify => g.bce_with_logits(y, &cls_targets),
            }
            .map_err(err)?;
            let grads = if with_grads { Some(g.backward(loss).map_err(err)?) } else { None };
            Ok((g.value(loss).item(), grads))
        };
        let grads = loss_of(&model, true)?.1.unwrap();
        let ids: Vec<_> = model.params.ids().collect();
        let h = 1e-5;
        let mut checked = 0;
        for _ in 0..500 {
            if checked == 10 {
                break;
            }
            let id = ids[rng.random_range(0..ids.len())];
            let k = rng.random_range(0..model.params.get(id).numel());
            let analytic = grads.get(id).map_or(0.0, |t| t.data()[k]);
            let orig = model.params.get(id).data()[k];
            model.params.get_mut(id).data_mut()[k] = orig + h;
            let up = loss_of(&model, false)?.0;
            model.params.get_mut(id).data_mut()[k] = orig - h;
            let down = loss_of(&model, false)?.0;
            model.params.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let scale = analytic.abs().max(numeric.abs());
            if scale < 1e-7 {
                // Parameter behind an inactive ReLU: relative error is meaningless.
                ensure((analytic - numeric).abs() < 1e-7, format!("{analytic} vs {numeric}"))?;
                continue;
            }
            let rel = (analytic - numeric).abs() / scale;
            ensure(
                rel <= 1e-3,
                format!("{arch:?} {task:?} {}[{k}]: analytic {analytic} numeric {numeric}", model.params.name(id)),
            )?;
            worst = worst.max(rel);
            checked += 1;
        }
        ensure(checked == 10, format!("{arch:?} {task:?}: only {checked} parameters had usable gradients"))?;
    }
    Ok(format!("20 parameters, max relative error {worst:.2e}"))
}

fn forward_seconds(model: &Model, batch: &Tensor) -> Result<f64, String> {
    let mut best = f64::INFINITY;
    for _ in 0..3 {
        let start = Instant::now();
        model.forward(batch).map_err(err)?;
        best = best.min(start.elapsed().as_secs_f64());
    }
    Ok(best)
}

fn resource_inequality() -> Outcome {
    let unet = Model::build(ModelSpec::new(Arch::Unet, Task::Segment), 0).map_err(err)?;
    let deeplab = Model::build(ModelSpec::new(Arch::Deeplabv3, Task::Segment), 0).map_err(err)?;
    let (pu, pd) = (unet.parameter_count(), deeplab.parameter_count());
    ensure(pd > pu, format!("DeepLabv3 {pd} params vs UNet {pu}"))?;
    let batch = random_batch(1, 256, 5);
    let tu = forward_seconds(&unet, &batch)?;
    let td = forward_seconds(&deeplab, &batch)?;
    ensure(td > tu, format!("DeepLabv3 forward {td:.3}s vs UNet {tu:.3}s"))?;
    Ok(format!("params {pd} > {pu}, forward {td:.3}s > {tu:.3}s"))
}

fn brute_force_two_means(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    for bits in 1u32..(1 << (n - 1)) {
        let mut cost = 0.0;
        for side in [true, false] {
            let members: Vec<&Vec<f64>> = (0..n).filter(|&i| ((bits >> i) & 1 == 1) == side).map(|i| &points[i]).collect();
            let mean: Vec<f64> = (0..2).map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64).collect();
            cost += members.iter().map(|p| (p[0] - mean[0]).powi(2) + (p[1] - mean[1]).powi(2)).sum::<f64>();
        }
        best = best.min(cost);
    }
    best
}

fn kmeans_oracle() -> Outcome {
    let start = Instant::now();
    let mut optimal = 0;
    for run in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + run);
        let points: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let r = kmeans(&points, 2, run, 100, 0.0).map_err(err)?;
        ensure(
            r.inertia_history.windows(2).all(|w| w[1] <= w[0]),
            format!("run {run}: inertia increased {:?}", r.inertia_history),
        )?;
        if (r.inertia - brute_force_two_means(&points)).abs() <= 1e-9 {
            optimal += 1;
        }
    }
    ensure(optimal >= 19, format!("{optimal}/20 optimal"))?;
    ensure(start.elapsed() < Duration::from_secs(5), format!("took {:?}", start.elapsed()))?;
    Ok(format!("{optimal}/20 optimal, inertia monotone in 20/20"))
}

fn classical_fixture() -> Outcome {
    let start = Instant::now();
    let side = 128;
    let s = side as f64;
    let (img, disk) = disk_image(side, (0.45 * s, 0.55 * s), 0.2 * s, 0.9, 0.1);
    let seg = kmeans_segment(&img, None, &SegmentConfig::default()).map_err(err)?;
    let tumor = extract_tumor_mask(&seg, &img, 50).map_err(err)?;
    let d = dice(&tumor, &disk, 1).map_err(err)?;
    ensure(d >= 0.9, format!("dice {d:.4}"))?;
    ensure(start.elapsed() < Duration::from_secs(30), format!("took {:?}", start.elapsed()))?;
    Ok(format!("dice {d:.4}"))
}

fn augmentation_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let (h, w) = (rng.random_range(1..30), rng.random_range(1..30));
        let g = Grid::from_fn(h, w, |_, _| rng.random::<f64>());
        let m = SegmentationMask::from_fn(h, w, |_, _| rng.random_range(0..4));
        let (g1, m1) = flip_horizontal(&g, Some(&m));
        let (g2, m2) = flip_horizontal(&g1, m1.as_ref());
        ensure(g2 == g && m2.as_ref() == Some(&m), "double flip changed the image")?;
        let same = (g.clone(), Some(m.clone()));
        ensure(rotate(&g, Some(&m), 0.0).map_err(err)? == same, "rotate(0) is not identity")?;
        ensure(scale(&g, Some(&m), 1.0).map_err(err)? == same, "scale(1) is not identity")?;
        ensure(shear(&g, Some(&m), 0.0).map_err(err)? == same, "shear(0) is not identity")?;
        let sample = ImageSample {
            id: "s".into(),
            pixels: g,
            label: Label::Tumorous,
            mask: Some(m),
        };
        ensure(
            sample_and_apply(&sample, &AugmentConfig::identity(), &mut rng).map_err(err)? == sample,
            "identity config changed the sample",
        )?;
    }
    let cfg = AugmentConfig::default();
    for i in 0..1000 {
        let label = if i % 2 == 0 { Label::Tumorous } else { Label::Normal };
        let (pixels, mask) = disk_image(16, (8.0, 7.0), 3.5, 0.8, 0.2);
        let sample = ImageSample {
            id: format!("{i}"),
            pixels,
            label,
            mask: Some(mask),
        };
        let out = sample_and_apply(&sample, &cfg, &mut rng).map_err(err)?;
        ensure(out.label == label, format!("augmentation {i} changed the label"))?;
    }
    Ok("double flip exact, identity parameters exact, 1000/1000 labels kept".into())
}

fn determinism() -> Outcome {
    let mut runs = Vec::new();
    let mut slowest = Duration::ZERO;
    for _ in 0..2 {
        let dir = TempDir::new().map_err(err)?;
        let start = Instant::now();
        let art = common::smoke_pipeline(dir.path());
        slowest = slowest.max(start.elapsed());
        let mut files = vec![art.manifest, art.preprocessed_manifest, art.report];
        files.extend(art.masks);
        let bytes = files
            .iter()
            .map(|f| fs::read(f).map(|b| (f.strip_prefix(dir.path()).unwrap().to_path_buf(), b)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(err)?;
        runs.push(bytes);
    }
    for ((name, a), (_, b)) in runs[0].iter().zip(&runs[1]) {
        ensure(a == b, format!("{} differs between runs", name.display()))?;
    }
    ensure(slowest < Duration::from_secs(120), format!("slowest run {slowest:?}"))?;
    Ok(format!("{} files identical, slowest run {:.1}s", runs[0].len(), slowest.as_secs_f64()))
}

fn checkpoint_round_trip() -> Outcome {
    let batch = random_batch(2, 32, 99);
    for arch in [Arch::Unet, Arch::Deeplabv3] {
        for task in [Task::Classify, Task::Segment] {
            let model = Model::build(ModelSpec::micro(arch, task, 2, 8, 32), 1).map_err(err)?;
            let back = checkpoint::from_bytes(&checkpoint::to_bytes(&model)).map_err(err)?;
            let a = model.forward(&batch).map_err(err)?;
            let b = back.forward(&batch).map_err(err)?;
            ensure(
                a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()),
                format!("{arch:?} {task:?} logits differ after reload"),
            )?;
        }
    }
    Ok("UNet and DeepLabv3 logits bit-identical".into())
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("metric golden fixture", golden_metrics),
        ("f1 identity", f1_identity),
        ("classification overfit", classification_overfit),
        ("segmentation overfit", segmentation_overfit),
        ("gradient check", gradient_check),
        ("resource inequality", resource_inequality),
        ("k-means oracle", kmeans_oracle),
        ("classical segmentation fixture", classical_fixture),
        ("augmentation properties", augmentation_properties),
        ("determinism", determinism),
        ("checkpoint round trip", checkpoint_round_trip),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name} ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL {name} ({detail})", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
