use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use glioseg::augment::{self, AugmentConfig};
use glioseg::classical_seg::{extract_tumor_mask, kmeans_segment, SegmentConfig};
use glioseg::dataset::{self, DatasetManifest, ImageSample, Label, SampleEntry, Split, MASK_DIR};
use glioseg::evaluation::{self, MetricsReport};
use glioseg::models::{Model, ModelSpec, Task};
use glioseg::preprocess::{self, PreprocessConfig};
use glioseg::raster::{self, SegmentationMask, TissueClass};
use glioseg::training::{self, checkpoint, ConfigDelta, TrainConfig, BEST_CHECKPOINT, LAST_CHECKPOINT};
use glioseg::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;

use crate::record::{self, RunConfig, RunRecord};
use crate::render::{self, PALETTE};
use crate::{Cli, Command, EvaluateArgs, IngestArgs, Method, PreprocessArgs, ReportArgs, SegmentArgs, TrainArgs};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MODEL_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const REPORT_FILE: &str = "report.json";
pub const PLOT_FILE: &str = "history.png";
pub const CONFUSION_FILE: &str = "confusion.txt";

pub fn execute(cli: &Cli, argv: Vec<String>) -> Result<()> {
    let workers = record::num_workers()?;
    let config = RunConfig {
        log_level: cli.log_level.to_string().to_lowercase(),
        ..RunConfig::default()
    };
    let (name, record_path) = match &cli.command {
        Command::Ingest(a) => ("ingest", beside(&a.out)),
        Command::Preprocess(a) => ("preprocess", a.out.join("preprocess.run.json")),
        Command::Train(a) => ("train", a.out.join("train.run.json")),
        Command::Evaluate(a) => ("evaluate", a.out.join("evaluate.run.json")),
        Command::Segment(a) => {
            let first = [&a.mask, &a.overlay, &a.tumor_mask].into_iter().flatten().next().ok_or_else(|| {
                Error::Config("segment needs at least one of --mask, --overlay or --tumor-mask".into())
            })?;
            ("segment", beside(first))
        }
        Command::Report(a) => ("report", a.out.join("report.run.json")),
    };
    let mut rec = RunRecord::new(name, argv, config, workers);
    let result = match &cli.command {
        Command::Ingest(a) => ingest(a, &mut rec),
        Command::Preprocess(a) => preprocess_cmd(a, &mut rec),
        Command::Train(a) => train_cmd(a, &mut rec),
        Command::Evaluate(a) => evaluate_cmd(a, &mut rec),
        Command::Segment(a) => segment_cmd(a, &mut rec),
        Command::Report(a) => report_cmd(a, &mut rec),
    };
    if let Err(e) = &result {
        rec.fail(e);
    }
    let saved = rec.save(&record_path);
    result.and(saved)
}

/// `out.json` → `out.run.json`, next to a single-file output.
fn beside(path: &Path) -> PathBuf {
    path.with_extension("run.json")
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{what} {}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn canonical(path: &Path) -> Result<PathBuf> {
    fs::canonicalize(path).map_err(|e| Error::io(path, e))
}

/// `root` relative to `base` when it lies beneath it, else absolute.
fn root_relative_to(root: &Path, base: &Path) -> Result<PathBuf> {
    let (root, base) = (canonical(root)?, canonical(base)?);
    Ok(match root.strip_prefix(&base) {
        Ok(rel) if rel.as_os_str().is_empty() => PathBuf::from("."),
        Ok(rel) => rel.to_path_buf(),
        Err(_) => root,
    })
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn ingest(a: &IngestArgs, rec: &mut RunRecord) -> Result<()> {
    let ratios: [f64; 3] = a
        .ratios
        .clone()
        .try_into()
        .map_err(|_| Error::Config("--ratios takes exactly three values".into()))?;
    rec.config.out = a.out.clone();
    rec.config.option("data_dir", &a.data_dir);
    rec.config.option("ratios", ratios);
    rec.seeds.insert("split".into(), a.seed);
    dataset::validate_ratios(ratios)?;

    let scan = dataset::scan_dataset(&a.data_dir)?;
    let mut manifest = if scan.manifest.entries.is_empty() {
        log::warn!("no images found under {}", a.data_dir.display());
        scan.manifest
    } else {
        dataset::split_manifest(&scan.manifest, ratios, a.seed)?
    };
    let out_dir = parent_dir(&a.out);
    create_dir(&out_dir)?;
    manifest.root = root_relative_to(&a.data_dir, &out_dir)?;
    manifest.save(&a.out)?;
    rec.output(&a.out)?;
    rec.config.option("skipped_files", scan.skipped.len());
    let [train, val, test] = manifest.split_counts();
    println!(
        "{} entries (train {train}, validation {val}, test {test}), {} skipped -> {}",
        manifest.entries.len(),
        scan.skipped.len(),
        a.out.display()
    );
    Ok(())
}

struct PreprocessJob {
    index: usize,
    entry: SampleEntry,
    copies: usize,
}

/// Writes the preprocessed image (and mask) of one entry plus its augmented
/// copies, returning the new manifest entries and files written.
fn preprocess_entry(
    manifest: &DatasetManifest,
    job: &PreprocessJob,
    pp: &PreprocessConfig,
    aug: &AugmentConfig,
    out: &Path,
) -> Result<(Vec<SampleEntry>, Vec<PathBuf>)> {
    let raw = manifest.load_sample(&job.entry)?;
    let processed = preprocess::preprocess_pipeline(&raw, pp)?;
    let mut entries = Vec::new();
    let mut files = Vec::new();
    let mut emit = |sample: &ImageSample, rel: PathBuf| -> Result<()> {
        let rel_str = path_string(&rel);
        raster::write_gray_png(&sample.pixels, 255.0, &out.join(&rel))?;
        files.push(rel.clone());
        let mask_path = match &sample.mask {
            Some(mask) => {
                let mrel = Path::new(MASK_DIR).join(&rel);
                raster::write_mask_png(mask, &out.join(&mrel))?;
                files.push(mrel.clone());
                Some(path_string(&mrel))
            }
            None => None,
        };
        entries.push(SampleEntry {
            id: if entries.is_empty() { job.entry.id.clone() } else { rel_str.clone() },
            path: rel_str,
            label: sample.label,
            split: job.entry.split,
            mask_path,
        });
        Ok(())
    };
    let base = output_path(&job.entry.id);
    emit(&processed, base.clone())?;
    for copy in 0..job.copies {
        let mut rng = ChaCha8Rng::seed_from_u64(aug.seed);
        rng.set_stream(((job.index as u64) << 20) | copy as u64);
        let augmented = augment::sample_and_apply(&processed, aug, &mut rng)?;
        let stem = base.file_stem().expect("ids name files").to_string_lossy();
        emit(&augmented, base.with_file_name(format!("{stem}_aug{copy}.png")))?;
    }
    Ok((entries, files))
}

fn output_path(id: &str) -> PathBuf {
    Path::new(id).with_extension("png")
}

fn path_string(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn preprocess_cmd(a: &PreprocessArgs, rec: &mut RunRecord) -> Result<()> {
    let mut pp: PreprocessConfig = match &a.config {
        Some(p) => read_json(p, "preprocess config")?,
        None => PreprocessConfig::default(),
    };
    if let Some(side) = a.side {
        pp.target_side = side;
    }
    let aug: AugmentConfig = match &a.augment_config {
        Some(p) => read_json(p, "augmentation config")?,
        None => AugmentConfig::default(),
    };
    rec.config.out = a.out.clone();
    rec.config.preprocess = Some(pp.clone());
    rec.config.option("materialize", a.materialize);
    if a.materialize > 0 {
        rec.config.augment = Some(aug.clone());
        rec.seeds.insert("augment".into(), aug.seed);
    }
    rec.config.validate()?;

    let manifest = DatasetManifest::load(&a.manifest)?;
    rec.input(&a.manifest)?;
    create_dir(&a.out)?;
    if canonical(&a.out)? == canonical(&manifest.root)? {
        return Err(Error::Config(format!(
            "--out {} is the dataset root; preprocessing never writes into its inputs",
            a.out.display()
        )));
    }
    let mut seen = HashSet::new();
    for e in &manifest.entries {
        if !seen.insert(output_path(&e.id)) {
            return Err(Error::Validation(format!(
                "two entries map to the same output file {}",
                output_path(&e.id).display()
            )));
        }
    }

    let jobs: Vec<PreprocessJob> = manifest
        .entries
        .iter()
        .enumerate()
        .map(|(index, entry)| PreprocessJob {
            index,
            entry: entry.clone(),
            copies: if entry.split == Split::Train { a.materialize } else { 0 },
        })
        .collect();
    let workers = rec.num_workers.min(jobs.len()).max(1);
    let mut results: Vec<(usize, Result<(Vec<SampleEntry>, Vec<PathBuf>)>)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let (jobs, manifest, pp, aug, out) = (&jobs, &manifest, &pp, &aug, &a.out);
                s.spawn(move || {
                    jobs.iter()
                        .skip(w)
                        .step_by(workers)
                        .map(|job| (job.index, preprocess_entry(manifest, job, pp, aug, out)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("preprocess worker panicked"))
            .collect()
    });
    results.sort_by_key(|r| r.0);

    let mut entries = Vec::new();
    let mut files = Vec::new();
    for (_, r) in results {
        let (e, f) = r?;
        entries.extend(e);
        files.extend(f);
    }
    entries.sort_by(|x, y| x.id.cmp(&y.id));
    if let Some(w) = entries.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::Validation(format!(
            "augmented copy collides with existing entry `{}`",
            w[0].id
        )));
    }
    let out_manifest = DatasetManifest {
        root: PathBuf::from("."),
        seed: manifest.seed,
        split_ratios: manifest.split_ratios,
        entries,
    };
    let manifest_path = a.out.join(MANIFEST_FILE);
    out_manifest.save(&manifest_path)?;
    files.sort();
    for f in &files {
        rec.output(&a.out.join(f))?;
    }
    rec.output(&manifest_path)?;
    println!(
        "{} images preprocessed to {}x{} -> {}",
        out_manifest.entries.len(),
        pp.target_side,
        pp.target_side,
        manifest_path.display()
    );
    Ok(())
}

fn check_override(flag: &str, given: Option<usize>, actual: usize) -> Result<()> {
    match given {
        Some(v) if v != actual => Err(Error::Config(format!(
            "--{flag} {v} conflicts with the checkpoint's value {actual}"
        ))),
        _ => Ok(()),
    }
}

fn train_cmd(a: &TrainArgs, rec: &mut RunRecord) -> Result<()> {
    let mut config: TrainConfig = match &a.config {
        Some(p) => read_json(p, "training config")?,
        None => TrainConfig::default(),
    };
    if config.checkpoint_dir.is_some() {
        log::warn!("checkpoint_dir from the config file is replaced by --out");
    }
    config.checkpoint_dir = Some(a.out.clone());

    let model = match &a.init {
        Some(init) => {
            rec.input(init)?;
            let model = training::load_checkpoint(init)?;
            if a.arch.is_some_and(|arch| arch != model.spec.arch) || a.task.is_some_and(|t| t != model.spec.task) {
                return Err(Error::Config(format!(
                    "--arch/--task do not match the checkpoint ({:?}, {:?})",
                    model.spec.arch, model.spec.task
                )));
            }
            check_override("side", a.side, model.spec.input_side)?;
            check_override("base", a.base, model.spec.base_channels)?;
            check_override("depth", a.depth, model.spec.depth)?;
            Some(model)
        }
        None => None,
    };
    let spec = match &model {
        Some(m) => m.spec.clone(),
        None => {
            let (Some(arch), Some(task)) = (a.arch, a.task) else {
                return Err(Error::Config("train needs --arch and --task unless --init is given".into()));
            };
            let mut spec = ModelSpec::new(arch, task);
            spec.input_side = a.side.unwrap_or(spec.input_side);
            spec.base_channels = a.base.unwrap_or(spec.base_channels);
            spec.depth = a.depth.unwrap_or(spec.depth);
            spec
        }
    };
    rec.config.out = a.out.clone();
    rec.config.train = Some(config.clone());
    rec.config.augment = Some(config.augment.clone());
    rec.config.model = Some(spec.clone());
    rec.config.option("fine_tune", a.init.is_some());
    rec.seeds.insert("train".into(), config.seed);
    rec.seeds.insert("augment".into(), config.augment.seed);
    rec.config.validate()?;

    let manifest = DatasetManifest::load(&a.manifest)?;
    rec.input(&a.manifest)?;
    create_dir(&a.out)?;
    let (model, history) = match model {
        Some(m) => training::fine_tune(m, &manifest, &config, &ConfigDelta::default())?,
        None => training::train(Model::build(spec, config.seed)?, &manifest, &config)?,
    };
    let model_path = a.out.join(MODEL_FILE);
    training::save_checkpoint(&model, &model_path)?;
    let history_path = a.out.join(HISTORY_FILE);
    history.save_csv(&history_path)?;
    for f in [MODEL_FILE, HISTORY_FILE, LAST_CHECKPOINT, BEST_CHECKPOINT] {
        let p = a.out.join(f);
        if p.is_file() {
            rec.output(&p)?;
        }
    }
    match history.last() {
        Some(r) => println!(
            "{} epochs: train_loss {:.5} val_loss {:.5} train_acc {:.4} val_acc {:.4} -> {}",
            history.len(),
            r.train_loss,
            r.val_loss,
            r.train_acc,
            r.val_acc,
            model_path.display()
        ),
        None => println!("0 epochs run -> {}", model_path.display()),
    }
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs, rec: &mut RunRecord) -> Result<()> {
    rec.config.out = a.out.clone();
    rec.config.option("split", &a.split);
    rec.config.option("threshold", a.threshold);
    let split = Split::parse(&a.split)?;
    let bytes = fs::read(&a.checkpoint).map_err(|e| Error::io(&a.checkpoint, e))?;
    let model = checkpoint::from_bytes(&bytes)?;
    rec.config.model = Some(model.spec.clone());
    rec.input(&a.checkpoint)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    rec.input(&a.manifest)?;

    let mut report = evaluation::evaluate_model(&model, &manifest, split, a.threshold)?;
    report.checkpoint_id = Some(record::sha256_hex(&bytes));
    report.manifest_hash = Some(record::sha256_file(&a.manifest)?);
    create_dir(&a.out)?;
    let path = a.out.join(REPORT_FILE);
    fs::write(&path, report.to_json()).map_err(|e| Error::io(&path, e))?;
    rec.output(&path)?;
    print!("{}", render::metrics_text(&report));
    Ok(())
}

fn segment_cmd(a: &SegmentArgs, rec: &mut RunRecord) -> Result<()> {
    rec.config.out = a.mask.clone().or(a.overlay.clone()).or(a.tumor_mask.clone()).unwrap_or_default();
    rec.config.option("method", format!("{:?}", a.method).to_lowercase());
    rec.config.option("image", &a.image);
    let raw = raster::read_grid(&a.image)?;
    rec.input(&a.image)?;
    let gray = preprocess::to_grayscale(&raw)?;

    let (image, classes, tumor) = match a.method {
        Method::Kmeans => {
            let cfg = SegmentConfig {
                k: a.k,
                seed: a.seed,
                min_area: a.min_area,
                ..SegmentConfig::default()
            };
            rec.config.segment = Some(cfg.clone());
            rec.seeds.insert("kmeans".into(), a.seed);
            rec.config.validate()?;
            let image = preprocess::normalize(&gray);
            let classes = kmeans_segment(&image, None, &cfg)?;
            let tumor = extract_tumor_mask(&classes, &image, a.min_area)?;
            (image, classes, tumor)
        }
        Method::Model => {
            let path = a
                .checkpoint
                .as_ref()
                .ok_or_else(|| Error::Config("--method model needs --checkpoint".into()))?;
            let model = training::load_checkpoint(path)?;
            rec.input(path)?;
            rec.config.model = Some(model.spec.clone());
            if model.spec.task != Task::Segment {
                return Err(Error::Config("--method model needs a segmentation checkpoint".into()));
            }
            let side = model.spec.input_side;
            let sized = if gray.height() == side && gray.width() == side {
                gray
            } else {
                log::info!("resizing {}x{} input to the model's {side}x{side}", gray.height(), gray.width());
                preprocess::resize(&gray, side)?
            };
            let image = preprocess::normalize(&sized);
            let sample = ImageSample {
                id: a.image.display().to_string(),
                pixels: image.clone(),
                label: Label::Normal,
                mask: None,
            };
            let classes = evaluation::predict_masks(&model, &[sample])?.remove(0);
            let tumor = classes.map(|l| u8::from(l == TissueClass::Tumor as u8));
            (image, classes, tumor)
        }
    };
    let write_mask = |mask: &SegmentationMask, path: &Path, rec: &mut RunRecord| -> Result<()> {
        raster::write_mask_png(mask, path)?;
        rec.output(path)
    };
    if let Some(p) = &a.mask {
        write_mask(&classes, p, rec)?;
    }
    if let Some(p) = &a.tumor_mask {
        write_mask(&tumor, p, rec)?;
    }
    if let Some(p) = &a.overlay {
        render::save_png(&render::render_overlay(&image, &classes, &PALETTE)?, p)?;
        rec.output(p)?;
    }
    println!(
        "{} classes, tumor area {} px of {}",
        classes.present_labels().len(),
        tumor.nonzero_count(),
        tumor.labels().len()
    );
    Ok(())
}

fn report_cmd(a: &ReportArgs, rec: &mut RunRecord) -> Result<()> {
    rec.config.out = a.out.clone();
    if a.history.is_none() && a.metrics.is_none() {
        return Err(Error::Config("report needs --history and/or --metrics".into()));
    }
    create_dir(&a.out)?;
    if let Some(h) = &a.history {
        rec.input(h)?;
        let out = a.out.join(PLOT_FILE);
        render::render_history_plot(h, &out)?;
        rec.output(&out)?;
        println!("training curves -> {}", out.display());
    }
    if let Some(m) = &a.metrics {
        rec.input(m)?;
        let text = fs::read_to_string(m).map_err(|e| Error::io(m, e))?;
        let report: MetricsReport = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("malformed report {}: {e}", m.display())))?;
        let grid = render::metrics_text(&report);
        let out = a.out.join(CONFUSION_FILE);
        fs::write(&out, &grid).map_err(|e| Error::io(&out, e))?;
        rec.output(&out)?;
        print!("{grid}");
    }
    Ok(())
}
