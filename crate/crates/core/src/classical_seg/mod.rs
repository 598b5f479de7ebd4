//! Classical segmentation: per-pixel K-means over intensity, position and
//! (optionally) autoencoder latent features, plus tumor-region extraction.

mod autoencoder;
mod kmeans;

use glioseg_nn::{Graph, ParamStore};
use serde::{Deserialize, Serialize};

pub use autoencoder::{train_autoencoder, Autoencoder, AutoencoderSpec};
pub use kmeans::{kmeans, KMeansResult};

use crate::error::{Error, Result};
use crate::raster::{Grid, SegmentationMask, TissueClass};

/// Minimum tumor component area at 256×256.
pub const DEFAULT_MIN_AREA: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    pub k: usize,
    pub seed: u64,
    /// Multiplier on the normalised row/column features.
    pub spatial_weight: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub min_area: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            k: 4,
            seed: 0,
            spatial_weight: 1.0,
            max_iters: 100,
            tol: 1e-6,
            min_area: DEFAULT_MIN_AREA,
        }
    }
}

impl SegmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Validation(format!(
                "k-means segmentation needs k >= 2, got {}",
                self.k
            )));
        }
        if !(self.spatial_weight >= 0.0 && self.spatial_weight.is_finite()) {
            return Err(Error::Validation(format!(
                "spatial_weight must be non-negative, got {}",
                self.spatial_weight
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Validation("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Latent channels resized bilinearly to the image, each scaled by its
/// largest magnitude so every feature lies in `[-1, 1]`.
fn latent_features(encoder: &Autoencoder, image: &Grid) -> Result<Vec<Vec<f64>>> {
    let z = encoder.encode(image)?;
    let empty = ParamStore::new();
    let mut g = Graph::new(&empty);
    let v = g.input(z);
    let up = g.resize_bilinear(v, image.height(), image.width())?;
    let t = g.value(up);
    let plane = image.height() * image.width();
    Ok(t.data()
        .chunks(plane)
        .map(|ch| {
            let peak = ch.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if peak > 0.0 {
                ch.iter().map(|v| v / peak).collect()
            } else {
                ch.to_vec()
            }
        })
        .collect())
}

/// Clusters the pixels of a unit-interval grayscale image. Labels are the
/// non-empty clusters ordered by ascending mean intensity, so 0 is the
/// darkest cluster (usually the background around the head).
pub fn kmeans_segment(image: &Grid, encoder: Option<&Autoencoder>, config: &SegmentConfig) -> Result<SegmentationMask> {
    config.validate()?;
    if image.channels() != 1 {
        return Err(Error::Validation("k-means segmentation expects a grayscale image".into()));
    }
    let (h, w) = (image.height(), image.width());
    let latents = encoder.map(|e| latent_features(e, image)).transpose()?;
    let sw = config.spatial_weight;
    let points: Vec<Vec<f64>> = (0..h * w)
        .map(|i| {
            let (r, c) = (i / w, i % w);
            let mut f = vec![image.data()[i], sw * r as f64 / h as f64, sw * c as f64 / w as f64];
            if let Some(l) = &latents {
                f.extend(l.iter().map(|ch| ch[i]));
            }
            f
        })
        .collect();
    let result = kmeans(&points, config.k, config.seed, config.max_iters, config.tol)?;
    Ok(relabel_by_intensity(image, &result.assignments, config.k))
}

fn cluster_means(image: &Grid, labels: &[usize], k: usize) -> Vec<Option<f64>> {
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (&l, &v) in labels.iter().zip(image.data()) {
        sums[l] += v;
        counts[l] += 1;
    }
    (0..k)
        .map(|j| (counts[j] > 0).then(|| sums[j] / counts[j] as f64))
        .collect()
}

fn relabel_by_intensity(image: &Grid, assignments: &[usize], k: usize) -> SegmentationMask {
    let means = cluster_means(image, assignments, k);
    let mut order: Vec<(usize, f64)> = means.iter().enumerate().filter_map(|(j, m)| m.map(|m| (j, m))).collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut rank = vec![0u8; k];
    for (new, &(old, _)) in order.iter().enumerate() {
        rank[old] = new as u8;
    }
    let labels = assignments.iter().map(|&a| rank[a]).collect();
    SegmentationMask::from_vec(image.height(), image.width(), labels).expect("one label per pixel")
}

/// Binary tumor mask (tumor = 1): the label with the brightest mean
/// intensity, minus 4-connected components smaller than `min_area`.
/// A segmentation with fewer than two labels yields an empty mask.
pub fn extract_tumor_mask(seg: &SegmentationMask, image: &Grid, min_area: usize) -> Result<SegmentationMask> {
    if !seg.same_shape(image) || image.channels() != 1 {
        return Err(Error::Validation(format!(
            "segmentation {}x{} does not match grayscale image {}x{}x{}",
            seg.height(),
            seg.width(),
            image.height(),
            image.width(),
            image.channels()
        )));
    }
    let present = seg.present_labels();
    if present.len() < 2 {
        return Ok(SegmentationMask::new(seg.height(), seg.width()));
    }
    let k = usize::from(*present.last().expect("non-empty")) + 1;
    let labels: Vec<usize> = seg.labels().iter().map(|&l| usize::from(l)).collect();
    let means = cluster_means(image, &labels, k);
    let brightest = means
        .iter()
        .enumerate()
        .filter_map(|(j, m)| m.map(|m| (j, m)))
        .fold((0, f64::NEG_INFINITY), |best, (j, m)| if m > best.1 { (j, m) } else { best })
        .0 as u8;
    let tumor = seg.map(|l| if l == brightest { TissueClass::Tumor as u8 } else { 0 });
    Ok(remove_small_components(&tumor, min_area))
}

/// Clears every 4-connected non-zero component with fewer than `min_area` pixels.
pub fn remove_small_components(mask: &SegmentationMask, min_area: usize) -> SegmentationMask {
    let (h, w) = (mask.height(), mask.width());
    let mut out = mask.clone();
    let mut seen = vec![false; h * w];
    let mut stack = Vec::new();
    let mut component = Vec::new();
    for start in 0..h * w {
        if seen[start] || mask.labels()[start] == 0 {
            continue;
        }
        let label = mask.labels()[start];
        seen[start] = true;
        stack.push(start);
        component.clear();
        while let Some(i) = stack.pop() {
            component.push(i);
            let (r, c) = (i / w, i % w);
            let mut visit = |j: usize| {
                if !seen[j] && mask.labels()[j] == label {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
        if component.len() < min_area {
            for &i in &component {
                out.labels_mut()[i] = 0;
            }
        }
    }
    out
}
