//! Conversion between image samples and network tensors.

use glioseg_nn::Tensor;

use crate::dataset::{DatasetManifest, ImageSample, Label, Split};
use crate::error::{Error, Result};
use crate::models::{ModelSpec, Task};
use crate::preprocess;
use crate::raster::SegmentationMask;

/// Loads a split and rescales stored 0–255 intensities to the unit interval.
/// Images must already be preprocessed to the model's input size.
pub fn load_model_inputs(manifest: &DatasetManifest, split: Split, spec: &ModelSpec) -> Result<Vec<ImageSample>> {
    let mut out = Vec::new();
    for entry in manifest.entries_in(split) {
        let mut sample = manifest.load_sample(entry)?;
        check_geometry(&sample, spec)?;
        sample.pixels = preprocess::normalize(&sample.pixels);
        out.push(sample);
    }
    Ok(out)
}

fn check_geometry(sample: &ImageSample, spec: &ModelSpec) -> Result<()> {
    let side = spec.input_side;
    if sample.pixels.channels() != spec.in_channels || sample.height() != side || sample.width() != side {
        return Err(Error::Validation(format!(
            "sample {} is {}x{} with {} channel(s); the model expects preprocessed {side}x{side} with {} channel(s)",
            sample.id,
            sample.height(),
            sample.width(),
            sample.pixels.channels(),
            spec.in_channels
        )));
    }
    Ok(())
}

/// Stacks unit-interval samples into an `(N, C, S, S)` batch.
pub fn image_batch(samples: &[&ImageSample], spec: &ModelSpec) -> Result<Tensor> {
    let side = spec.input_side;
    let c = spec.in_channels;
    let mut data = Vec::with_capacity(samples.len() * c * side * side);
    for s in samples {
        check_geometry(s, spec)?;
        let px = s.pixels.data();
        if px.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("sample {} holds non-finite pixels", s.id)));
        }
        // HWC → CHW
        for ch in 0..c {
            data.extend((0..side * side).map(|i| px[i * c + ch]));
        }
    }
    Ok(Tensor::from_vec(&[samples.len(), c, side, side], data)?)
}

/// Binary label targets as an `(N, 1)` tensor.
pub fn label_targets(samples: &[&ImageSample]) -> Tensor {
    let data = samples.iter().map(|s| s.label.as_f64()).collect();
    Tensor::from_vec(&[samples.len(), 1], data).expect("length matches")
}

/// Ground-truth mask for segmentation. Normal slices without a mask are all
/// background; a tumorous slice without one cannot be trained or scored.
pub fn target_mask(sample: &ImageSample, num_classes: usize) -> Result<SegmentationMask> {
    let mask = match (&sample.mask, sample.label) {
        (Some(m), _) => m.clone(),
        (None, Label::Normal) => SegmentationMask::new(sample.height(), sample.width()),
        (None, Label::Tumorous) => {
            return Err(Error::Config(format!(
                "segmentation needs a mask for tumorous sample {}",
                sample.id
            )))
        }
    };
    if let Some(&bad) = mask.labels().iter().find(|&&l| usize::from(l) >= num_classes) {
        return Err(Error::Validation(format!(
            "mask for {} has label {bad}, model has {num_classes} classes",
            sample.id
        )));
    }
    Ok(mask)
}

/// Per-pixel class targets in `(n, y, x)` order.
pub fn pixel_targets(samples: &[&ImageSample], spec: &ModelSpec) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(samples.len() * spec.input_side * spec.input_side);
    for s in samples {
        out.extend(target_mask(s, spec.num_classes)?.labels().iter().map(|&l| usize::from(l)));
    }
    Ok(out)
}

/// Rejects sample sets that the task cannot use.
pub fn check_task_inputs(samples: &[ImageSample], spec: &ModelSpec) -> Result<()> {
    for s in samples {
        check_geometry(s, spec)?;
        if spec.task == Task::Segment {
            target_mask(s, spec.num_classes)?;
        }
    }
    Ok(())
}

/// Per-pixel argmax (lowest class wins ties) of `(N, C, H, W)` logits.
pub fn argmax_masks(logits: &Tensor) -> Result<Vec<SegmentationMask>> {
    let (n, c, h, w) = logits.dims4()?;
    let plane = h * w;
    let d = logits.data();
    Ok((0..n)
        .map(|i| {
            let labels = (0..plane)
                .map(|p| {
                    let mut best = 0;
                    for k in 1..c {
                        if d[(i * c + k) * plane + p] > d[(i * c + best) * plane + p] {
                            best = k;
                        }
                    }
                    best as u8
                })
                .collect();
            SegmentationMask::from_vec(h, w, labels).expect("plane size")
        })
        .collect())
}
