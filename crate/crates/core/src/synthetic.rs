//! Synthetic slices with known answers, used by tests and smoke runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{ImageSample, Label};
use crate::raster::{Grid, SegmentationMask, TissueClass};

/// A disk of `fg` on a field of `bg`, with the matching tumor mask.
pub fn disk_image(side: usize, center: (f64, f64), radius: f64, fg: f64, bg: f64) -> (Grid, SegmentationMask) {
    let inside = |r: usize, c: usize| {
        let (dy, dx) = (r as f64 - center.0, c as f64 - center.1);
        dy * dy + dx * dx <= radius * radius
    };
    let grid = Grid::from_fn(side, side, |r, c| if inside(r, c) { fg } else { bg });
    let mask = SegmentationMask::from_fn(side, side, |r, c| {
        if inside(r, c) {
            TissueClass::Tumor as u8
        } else {
            TissueClass::Background as u8
        }
    });
    (grid, mask)
}

fn jitter(grid: &mut Grid, rng: &mut ChaCha8Rng, amplitude: f64) {
    for v in grid.data_mut() {
        *v = (*v + rng.random_range(-amplitude..=amplitude)).clamp(0.0, 1.0);
    }
}

/// `per_class` tumorous slices with a bright blob and `per_class` blank
/// slices, unit-interval intensities, interleaved by label.
pub fn blob_classification_set(per_class: usize, side: usize, seed: u64) -> Vec<ImageSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * per_class);
    let s = side as f64;
    for i in 0..per_class {
        let radius = rng.random_range(0.12 * s..0.2 * s);
        let center = (
            rng.random_range(radius..s - radius),
            rng.random_range(radius..s - radius),
        );
        let (mut blob, _) = disk_image(side, center, radius, 0.9, 0.1);
        jitter(&mut blob, &mut rng, 0.05);
        out.push(ImageSample {
            id: format!("blob_{i:03}"),
            pixels: blob,
            label: Label::Tumorous,
            mask: None,
        });
        let mut blank = Grid::filled(side, side, 1, 0.1);
        jitter(&mut blank, &mut rng, 0.05);
        out.push(ImageSample {
            id: format!("blank_{i:03}"),
            pixels: blank,
            label: Label::Normal,
            mask: None,
        });
    }
    out
}

/// Tumorous slices each holding one bright disk, with exact masks.
pub fn disk_segmentation_set(count: usize, side: usize, seed: u64) -> Vec<ImageSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = side as f64;
    (0..count)
        .map(|i| {
            let radius = rng.random_range(0.15 * s..0.3 * s);
            let center = (
                rng.random_range(radius..s - radius),
                rng.random_range(radius..s - radius),
            );
            let (mut pixels, mask) = disk_image(side, center, radius, 0.85, 0.15);
            jitter(&mut pixels, &mut rng, 0.05);
            ImageSample {
                id: format!("disk_{i:03}"),
                pixels,
                label: Label::Tumorous,
                mask: Some(mask),
            }
        })
        .collect()
}
