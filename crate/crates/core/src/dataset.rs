//! Dataset discovery, deterministic stratified splitting and sample loading.
//!
//! The on-disk layout is two folders under a root: `yes/` holds tumorous slices
//! and `no/` holds normal ones. Optional ground-truth masks live under
//! `masks/`, mirroring the image's relative path with a `.png` extension
//! (`masks/yes/a.png` for `yes/a.jpg`).

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::raster::{self, Grid, SegmentationMask};

pub const POSITIVE_DIR: &str = "yes";
pub const NEGATIVE_DIR: &str = "no";
pub const MASK_DIR: &str = "masks";
pub const DEFAULT_SPLIT_RATIOS: [f64; 3] = [0.70, 0.15, 0.15];

const SUPPORTED_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// Binary image label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Normal,
    Tumorous,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Tumorous => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Normal),
            1 => Some(Label::Tumorous),
            _ => None,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.as_u8())
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Label::from_u8(v).ok_or_else(|| serde::de::Error::custom(format!("label must be 0 or 1, got {v}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
    Unassigned,
}

impl Split {
    pub const ASSIGNED: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split `{other}` (expected train, validation or test)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    /// Path relative to the manifest root with `/` separators.
    pub id: String,
    /// Location of the image, relative to the manifest root.
    pub path: String,
    pub label: Label,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub seed: u64,
    pub split_ratios: [f64; 3],
    pub entries: Vec<SampleEntry>,
}

/// Result of [`scan_dataset`], including files that could not be read.
#[derive(Clone, Debug)]
pub struct ScanOutcome {
    pub manifest: DatasetManifest,
    pub skipped: Vec<PathBuf>,
}

/// A decoded image with its label and optional ground-truth mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub id: String,
    pub pixels: Grid,
    pub label: Label,
    pub mask: Option<SegmentationMask>,
}

impl ImageSample {
    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn needs_grayscale(&self) -> bool {
        self.pixels.channels() == 3
    }
}

fn relative_id(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn is_supported(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| SUPPORTED_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else if is_supported(&path) {
            out.push(path);
        }
    }
    Ok(())
}

fn mask_for(root: &Path, id: &str) -> Option<String> {
    let rel = Path::new(MASK_DIR).join(id).with_extension("png");
    root.join(&rel).is_file().then(|| relative_id(Path::new(""), &rel))
}

/// Enumerates `yes/` and `no/` under `root` into an unsplit manifest.
pub fn scan_dataset(root: &Path) -> Result<ScanOutcome> {
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (dir, label) in [(POSITIVE_DIR, Label::Tumorous), (NEGATIVE_DIR, Label::Normal)] {
        let class_dir = root.join(dir);
        if !class_dir.is_dir() {
            return Err(Error::Config(format!(
                "dataset root {} has no `{dir}` directory",
                root.display()
            )));
        }
        let mut files = Vec::new();
        collect_files(&class_dir, &mut files)?;
        for path in files {
            match raster::probe_dimensions(&path) {
                Ok((w, h)) if w > 0 && h > 0 => {
                    let id = relative_id(root, &path);
                    entries.push(SampleEntry {
                        mask_path: mask_for(root, &id),
                        path: id.clone(),
                        id,
                        label,
                        split: Split::Unassigned,
                    });
                }
                Ok(_) => {
                    log::warn!("skipping zero-area image {}", path.display());
                    skipped.push(path);
                }
                Err(e) => {
                    log::warn!("skipping unreadable image: {e}");
                    skipped.push(path);
                }
            }
        }
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(ScanOutcome {
        manifest: DatasetManifest {
            root: root.to_path_buf(),
            seed: 0,
            split_ratios: [1.0, 0.0, 0.0],
            entries,
        },
        skipped,
    })
}

/// Largest-remainder apportionment: every count is within 1 of `ratio × n`.
fn split_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact = ratios.map(|r| r * n as f64);
    let mut sizes = exact.map(|e| (e + 1e-9).floor() as usize);
    let mut leftover = n - sizes.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - sizes[a] as f64;
        let fb = exact[b] - sizes[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        if ratios[i] > 0.0 {
            sizes[i] += 1;
            leftover -= 1;
        }
    }
    sizes
}

pub fn validate_ratios(ratios: [f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::Config(format!("split ratios must be non-negative, got {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must sum to 1, got {sum}")));
    }
    Ok(())
}

/// Stratified, seeded split. Each label class is shuffled independently, the
/// classes are interleaved by relative rank so every contiguous run keeps the
/// global label mix, and the result is cut into train/validation/test blocks.
pub fn split_manifest(manifest: &DatasetManifest, ratios: [f64; 3], seed: u64) -> Result<DatasetManifest> {
    validate_ratios(ratios)?;
    let n = manifest.entries.len();
    if n == 0 {
        return Err(Error::Config("cannot split an empty manifest".into()));
    }
    let sizes = split_sizes(n, ratios);
    if n >= 10 {
        for (i, (&size, &ratio)) in sizes.iter().zip(&ratios).enumerate() {
            if size == 0 && ratio > 0.0 {
                return Err(Error::Config(format!(
                    "{:?} split would be empty with ratio {ratio} over {n} entries",
                    Split::ASSIGNED[i]
                )));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keyed: Vec<(f64, u8, usize)> = Vec::with_capacity(n);
    for label in [Label::Tumorous, Label::Normal] {
        let mut members: Vec<usize> = (0..n).filter(|&i| manifest.entries[i].label == label).collect();
        members.shuffle(&mut rng);
        let count = members.len() as f64;
        for (rank, idx) in members.into_iter().enumerate() {
            keyed.push(((rank as f64 + 0.5) / count, label.as_u8(), idx));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));

    let mut out = manifest.clone();
    out.seed = seed;
    out.split_ratios = ratios;
    let mut cursor = keyed.iter();
    for (split, &size) in Split::ASSIGNED.iter().zip(&sizes) {
        for &(_, _, idx) in cursor.by_ref().take(size) {
            out.entries[idx].split = *split;
        }
    }
    Ok(out)
}

impl DatasetManifest {
    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &SampleEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn split_counts(&self) -> [usize; 3] {
        Split::ASSIGNED.map(|s| self.entries_in(s).count())
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    /// Decodes one entry (and its mask, when present).
    pub fn load_sample(&self, entry: &SampleEntry) -> Result<ImageSample> {
        let pixels = raster::read_grid(&self.resolve(&entry.path))?;
        let mask = entry
            .mask_path
            .as_deref()
            .map(|m| raster::read_mask_png(&self.resolve(m)))
            .transpose()?;
        if let Some(mask) = &mask {
            if !mask.same_shape(&pixels) {
                return Err(Error::Validation(format!(
                    "mask for {} is {}x{}, image is {}x{}",
                    entry.id,
                    mask.height(),
                    mask.width(),
                    pixels.height(),
                    pixels.width()
                )));
            }
        }
        Ok(ImageSample {
            id: entry.id.clone(),
            pixels,
            label: entry.label,
            mask,
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<ImageSample>> {
        self.entries_in(split).map(|e| self.load_sample(e)).collect()
    }

    /// Pretty JSON with fixed field order.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest is always serializable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: DatasetManifest =
            serde_json::from_str(text).map_err(|e| Error::Validation(format!("malformed manifest: {e}")))?;
        let mut ids: Vec<&str> = m.entries.iter().map(|e| e.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Validation(format!("duplicate manifest id `{}`", w[0])));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Reads a manifest file. A relative `root` is taken relative to the
    /// directory holding the manifest, so a manifest can move with its data.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::from_json(&text)?;
        if m.root.is_relative() {
            if let Some(parent) = path.parent() {
                m.root = parent.join(&m.root);
            }
        }
        Ok(m)
    }
}
