//! Grayscale conversion, fixed-size resize, Gaussian denoising, high-pass
//! sharpening and unit-interval normalization.

use serde::{Deserialize, Serialize};

use crate::dataset::ImageSample;
use crate::error::{Error, Result};
use crate::raster::{Grid, SegmentationMask};

/// Upper end of the raw 8-bit intensity range.
pub const RAW_MAX: f64 = 255.0;

/// Identity plus a 4-neighbour Laplacian.
const SHARPEN_KERNEL: [[f64; 3]; 3] = [[0.0, -1.0, 0.0], [-1.0, 5.0, -1.0], [0.0, -1.0, 0.0]];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub target_side: usize,
    pub gaussian_kernel: usize,
    pub gaussian_sigma: f64,
    pub sharpen_enabled: bool,
    pub normalize: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_side: 256,
            gaussian_kernel: 5,
            gaussian_sigma: 1.0,
            sharpen_enabled: true,
            normalize: true,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gaussian_kernel < 3 || self.gaussian_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "gaussian_kernel must be odd and >= 3, got {}",
                self.gaussian_kernel
            )));
        }
        if !(self.gaussian_sigma > 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "gaussian_sigma must be positive, got {}",
                self.gaussian_sigma
            )));
        }
        if self.target_side < 16 {
            return Err(Error::Config(format!(
                "target_side must be at least 16, got {}",
                self.target_side
            )));
        }
        Ok(())
    }
}

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Luminance reduction of 3-channel grids (0.299 R + 0.587 G + 0.114 B).
/// Single-channel grids are returned unchanged. No rounding is applied.
pub fn to_grayscale(image: &Grid) -> Result<Grid> {
    match image.channels() {
        1 => Ok(image.clone()),
        3 => {
            let data = image
                .data()
                .chunks_exact(3)
                .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                .collect();
            Grid::from_vec(image.height(), image.width(), 1, data)
        }
        c => Err(Error::Validation(format!("expected 1 or 3 channels, got {c}"))),
    }
}

/// Half-pixel-centred bilinear taps `(lo, hi, weight_of_hi)` along one axis.
fn bilinear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            (lo, (lo + 1).min(input - 1), src - lo as f64)
        })
        .collect()
}

/// Bilinear resize to `height × width`. Each output is a convex combination of
/// inputs, so the value range never grows.
pub fn resize_to(image: &Grid, height: usize, width: usize) -> Result<Grid> {
    if image.is_empty() {
        return Err(Error::Validation("cannot resize an empty image".into()));
    }
    if height < 1 || width < 1 {
        return Err(Error::Validation(format!("invalid resize target {height}x{width}")));
    }
    if height == image.height() && width == image.width() {
        return Ok(image.clone());
    }
    let ty = bilinear_taps(image.height(), height);
    let tx = bilinear_taps(image.width(), width);
    let c = image.channels();
    let mut out = Grid::zeros(height, width, c);
    for (r, &(y0, y1, wy)) in ty.iter().enumerate() {
        for (col, &(x0, x1, wx)) in tx.iter().enumerate() {
            for ch in 0..c {
                let top = image.get(y0, x0, ch) * (1.0 - wx) + image.get(y0, x1, ch) * wx;
                let bottom = image.get(y1, x0, ch) * (1.0 - wx) + image.get(y1, x1, ch) * wx;
                out.set(r, col, ch, top * (1.0 - wy) + bottom * wy);
            }
        }
    }
    Ok(out)
}

pub fn resize(image: &Grid, side: usize) -> Result<Grid> {
    resize_to(image, side, side)
}

/// Nearest-neighbour resize for label masks.
pub fn resize_mask(mask: &SegmentationMask, side: usize) -> SegmentationMask {
    if mask.height() == side && mask.width() == side {
        return mask.clone();
    }
    let pick = |o: usize, n: usize| (((o as f64 + 0.5) * n as f64 / side as f64).floor() as usize).min(n - 1);
    SegmentationMask::from_fn(side, side, |r, c| mask.get(pick(r, mask.height()), pick(c, mask.width())))
}

/// Normalized 1-d Gaussian weights of odd length `kernel`.
pub fn gaussian_kernel_1d(kernel: usize, sigma: f64) -> Vec<f64> {
    let radius = (kernel / 2) as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Separable Gaussian blur with reflected borders, applied per channel.
pub fn gaussian_blur(image: &Grid, kernel: usize, sigma: f64) -> Result<Grid> {
    if kernel % 2 == 0 || kernel == 0 {
        return Err(Error::Validation(format!("gaussian kernel must be odd, got {kernel}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Validation(format!("gaussian sigma must be positive, got {sigma}")));
    }
    if image.is_empty() {
        return Err(Error::Validation("cannot blur an empty image".into()));
    }
    let weights = gaussian_kernel_1d(kernel, sigma);
    let radius = (kernel / 2) as isize;
    let (h, w, c) = (image.height(), image.width(), image.channels());

    let mut horizontal = Grid::zeros(h, w, c);
    for r in 0..h {
        for col in 0..w {
            for ch in 0..c {
                let acc = weights
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| wt * image.get(r, reflect(col as isize + k as isize - radius, w), ch))
                    .sum();
                horizontal.set(r, col, ch, acc);
            }
        }
    }
    let mut out = Grid::zeros(h, w, c);
    for r in 0..h {
        for col in 0..w {
            for ch in 0..c {
                let acc = weights
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| wt * horizontal.get(reflect(r as isize + k as isize - radius, h), col, ch))
                    .sum();
                out.set(r, col, ch, acc);
            }
        }
    }
    Ok(out)
}

/// Raw high-pass sharpening response before clamping.
pub fn sharpen_unclamped(image: &Grid) -> Result<Grid> {
    if image.is_empty() {
        return Err(Error::Validation("cannot sharpen an empty image".into()));
    }
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let mut out = Grid::zeros(h, w, c);
    for r in 0..h {
        for col in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (dy, row) in SHARPEN_KERNEL.iter().enumerate() {
                    for (dx, &k) in row.iter().enumerate() {
                        if k != 0.0 {
                            let rr = reflect(r as isize + dy as isize - 1, h);
                            let cc = reflect(col as isize + dx as isize - 1, w);
                            acc += k * image.get(rr, cc, ch);
                        }
                    }
                }
                out.set(r, col, ch, acc);
            }
        }
    }
    Ok(out)
}

/// Sharpening clamped back into `[lo, hi]`.
pub fn sharpen(image: &Grid, lo: f64, hi: f64) -> Result<Grid> {
    Ok(sharpen_unclamped(image)?.map(|v| v.clamp(lo, hi)))
}

/// Divides raw 0–255 intensities into the unit interval.
pub fn normalize(image: &Grid) -> Grid {
    image.map(|v| (v / RAW_MAX).clamp(0.0, 1.0))
}

/// grayscale → resize → blur → sharpen → normalize. Masks follow the resize
/// with nearest-neighbour sampling.
pub fn preprocess_pipeline(sample: &ImageSample, config: &PreprocessConfig) -> Result<ImageSample> {
    config.validate()?;
    let gray = to_grayscale(&sample.pixels)?;
    let sized = resize(&gray, config.target_side)?;
    let blurred = gaussian_blur(&sized, config.gaussian_kernel, config.gaussian_sigma)?;
    let sharpened = if config.sharpen_enabled {
        sharpen(&blurred, 0.0, RAW_MAX)?
    } else {
        blurred
    };
    let pixels = if config.normalize { normalize(&sharpened) } else { sharpened };
    Ok(ImageSample {
        id: sample.id.clone(),
        pixels,
        label: sample.label,
        mask: sample.mask.as_ref().map(|m| resize_mask(m, config.target_side)),
    })
}
