//! Label-preserving augmentations: rotation, scaling, horizontal flip, shear,
//! additive Gaussian noise and contrast adjustment.
//!
//! Geometric transforms resample the image bilinearly and the mask with nearest
//! neighbour, filling out-of-frame pixels with 0. Intensity transforms touch the
//! image only.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::ImageSample;
use crate::error::{Error, Result};
use crate::raster::{Grid, SegmentationMask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub rotation_max_deg: f64,
    pub scale_range: [f64; 2],
    pub flip_horizontal_prob: f64,
    pub shear_max_deg: f64,
    pub noise_sigma: f64,
    pub contrast_range: [f64; 2],
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_max_deg: 15.0,
            scale_range: [0.9, 1.1],
            flip_horizontal_prob: 0.5,
            shear_max_deg: 10.0,
            noise_sigma: 0.02,
            contrast_range: [0.8, 1.2],
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Every range collapsed onto its identity value.
    pub fn identity() -> Self {
        Self {
            rotation_max_deg: 0.0,
            scale_range: [1.0, 1.0],
            flip_horizontal_prob: 0.0,
            shear_max_deg: 0.0,
            noise_sigma: 0.0,
            contrast_range: [1.0, 1.0],
            seed: 0,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self { seed: self.seed, ..Self::identity() }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, [lo, hi]: [f64; 2]| {
            if lo.is_finite() && hi.is_finite() && lo <= hi && lo > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive with min <= max, got [{lo}, {hi}]")))
            }
        };
        ordered("scale_range", self.scale_range)?;
        ordered("contrast_range", self.contrast_range)?;
        if !(0.0..=1.0).contains(&self.flip_horizontal_prob) {
            return Err(Error::Config(format!(
                "flip_horizontal_prob must lie in [0, 1], got {}",
                self.flip_horizontal_prob
            )));
        }
        if !(0.0..=180.0).contains(&self.rotation_max_deg) {
            return Err(Error::Config(format!(
                "rotation_max_deg must lie in [0, 180], got {}",
                self.rotation_max_deg
            )));
        }
        if !(0.0..45.0).contains(&self.shear_max_deg) {
            return Err(Error::Config(format!(
                "shear_max_deg must lie in [0, 45), got {}",
                self.shear_max_deg
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

pub type Augmented = (Grid, Option<SegmentationMask>);

fn sample_bilinear(img: &Grid, r: f64, c: f64, ch: usize) -> f64 {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let (r0, c0) = (r.floor(), c.floor());
    let (fr, fc) = (r - r0, c - c0);
    let (r0, c0) = (r0 as isize, c0 as isize);
    let at = |rr: isize, cc: isize| {
        if rr < 0 || cc < 0 || rr >= h || cc >= w {
            0.0
        } else {
            img.get(rr as usize, cc as usize, ch)
        }
    };
    let top = at(r0, c0) * (1.0 - fc) + at(r0, c0 + 1) * fc;
    let bottom = at(r0 + 1, c0) * (1.0 - fc) + at(r0 + 1, c0 + 1) * fc;
    top * (1.0 - fr) + bottom * fr
}

fn sample_nearest(mask: &SegmentationMask, r: f64, c: f64) -> u8 {
    let (rr, cc) = (r.round(), c.round());
    if rr < 0.0 || cc < 0.0 || rr >= mask.height() as f64 || cc >= mask.width() as f64 {
        0
    } else {
        mask.get(rr as usize, cc as usize)
    }
}

/// Resamples through an inverse map `(out_row, out_col) → (src_row, src_col)`.
fn warp(image: &Grid, mask: Option<&SegmentationMask>, inverse: impl Fn(f64, f64) -> (f64, f64)) -> Augmented {
    let (h, w, chans) = (image.height(), image.width(), image.channels());
    let mut out = Grid::zeros(h, w, chans);
    for r in 0..h {
        for c in 0..w {
            let (sr, sc) = inverse(r as f64, c as f64);
            for ch in 0..chans {
                out.set(r, c, ch, sample_bilinear(image, sr, sc, ch));
            }
        }
    }
    let mask = mask.map(|m| {
        SegmentationMask::from_fn(m.height(), m.width(), |r, c| {
            let (sr, sc) = inverse(r as f64, c as f64);
            sample_nearest(m, sr, sc)
        })
    });
    (out, mask)
}

fn centre(image: &Grid) -> (f64, f64) {
    ((image.height() as f64 - 1.0) / 2.0, (image.width() as f64 - 1.0) / 2.0)
}

fn quarter_turn(image: &Grid, mask: Option<&SegmentationMask>, turns: i64) -> Augmented {
    let (h, w) = (image.height(), image.width());
    // output (r, c) ← input (h-1-c, r) for one positive quarter turn
    let src = |r: usize, c: usize| match turns.rem_euclid(4) {
        0 => (r, c),
        1 => (h - 1 - c, r),
        2 => (h - 1 - r, w - 1 - c),
        _ => (c, w - 1 - r),
    };
    let mut out = Grid::zeros(h, w, image.channels());
    for r in 0..h {
        for c in 0..w {
            let (sr, sc) = src(r, c);
            for ch in 0..image.channels() {
                out.set(r, c, ch, image.get(sr, sc, ch));
            }
        }
    }
    let mask = mask.map(|m| {
        SegmentationMask::from_fn(h, w, |r, c| {
            let (sr, sc) = src(r, c);
            m.get(sr, sc)
        })
    });
    (out, mask)
}

/// Rotation about the image centre. A positive quarter turn sends pixel
/// `(r, c)` to `(c, H-1-r)`; right angles on square grids are exact permutations.
pub fn rotate(image: &Grid, mask: Option<&SegmentationMask>, degrees: f64) -> Result<Augmented> {
    if !(degrees.abs() <= 180.0) {
        return Err(Error::Validation(format!("rotation must lie in [-180, 180], got {degrees}")));
    }
    if degrees == 0.0 {
        return Ok((image.clone(), mask.cloned()));
    }
    let turns = degrees / 90.0;
    if turns.fract() == 0.0 && image.height() == image.width() {
        return Ok(quarter_turn(image, mask, turns as i64));
    }
    let (cy, cx) = centre(image);
    let (sin, cos) = degrees.to_radians().sin_cos();
    Ok(warp(image, mask, |r, c| {
        let (dy, dx) = (r - cy, c - cx);
        (cy - sin * dx + cos * dy, cx + cos * dx + sin * dy)
    }))
}

/// Zoom about the centre, keeping the original frame.
pub fn scale(image: &Grid, mask: Option<&SegmentationMask>, factor: f64) -> Result<Augmented> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::Validation(format!("scale factor must be positive, got {factor}")));
    }
    if factor == 1.0 {
        return Ok((image.clone(), mask.cloned()));
    }
    let (cy, cx) = centre(image);
    Ok(warp(image, mask, |r, c| (cy + (r - cy) / factor, cx + (c - cx) / factor)))
}

pub fn flip_horizontal(image: &Grid, mask: Option<&SegmentationMask>) -> Augmented {
    let (h, w) = (image.height(), image.width());
    let mut out = Grid::zeros(h, w, image.channels());
    for r in 0..h {
        for c in 0..w {
            for ch in 0..image.channels() {
                out.set(r, c, ch, image.get(r, w - 1 - c, ch));
            }
        }
    }
    let mask = mask.map(|m| SegmentationMask::from_fn(m.height(), m.width(), |r, c| m.get(r, m.width() - 1 - c)));
    (out, mask)
}

/// Horizontal shear about the centre row: rows above the centre move one way,
/// rows below the other.
pub fn shear(image: &Grid, mask: Option<&SegmentationMask>, degrees: f64) -> Result<Augmented> {
    if !(degrees.abs() < 45.0) {
        return Err(Error::Validation(format!("shear must satisfy |deg| < 45, got {degrees}")));
    }
    if degrees == 0.0 {
        return Ok((image.clone(), mask.cloned()));
    }
    let (cy, _) = centre(image);
    let k = degrees.to_radians().tan();
    Ok(warp(image, mask, |r, c| (r, c - k * (r - cy))))
}

/// Additive zero-mean Gaussian noise, clamped to `[0, 1]`.
pub fn add_noise<R: Rng + ?Sized>(image: &Grid, sigma: f64, rng: &mut R) -> Result<Grid> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Validation(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// `clamp(mean + factor·(x − mean), 0, 1)` around the image's own mean.
pub fn adjust_contrast(image: &Grid, factor: f64) -> Result<Grid> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::Validation(format!("contrast factor must be positive, got {factor}")));
    }
    if factor == 1.0 {
        return Ok(image.clone());
    }
    let mean = image.mean();
    Ok(image.map(|v| (mean + factor * (v - mean)).clamp(0.0, 1.0)))
}

fn draw<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Parameters drawn for one augmentation pass.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentDraw {
    pub rotation_deg: f64,
    pub scale: f64,
    pub shear_deg: f64,
    pub flip: bool,
    pub contrast: f64,
}

impl AugmentDraw {
    pub fn sample<R: Rng + ?Sized>(config: &AugmentConfig, rng: &mut R) -> Self {
        Self {
            rotation_deg: draw(rng, -config.rotation_max_deg, config.rotation_max_deg),
            scale: draw(rng, config.scale_range[0], config.scale_range[1]),
            shear_deg: draw(rng, -config.shear_max_deg, config.shear_max_deg),
            flip: config.flip_horizontal_prob > 0.0 && rng.random::<f64>() < config.flip_horizontal_prob,
            contrast: draw(rng, config.contrast_range[0], config.contrast_range[1]),
        }
    }
}

/// Draws parameters from `config` and applies rotate → scale → shear → flip to
/// image and mask, then contrast → noise to the image. The label is carried
/// through untouched.
pub fn sample_and_apply<R: Rng + ?Sized>(sample: &ImageSample, config: &AugmentConfig, rng: &mut R) -> Result<ImageSample> {
    config.validate()?;
    let d = AugmentDraw::sample(config, rng);
    let (img, mask) = rotate(&sample.pixels, sample.mask.as_ref(), d.rotation_deg)?;
    let (img, mask) = scale(&img, mask.as_ref(), d.scale)?;
    let (img, mask) = shear(&img, mask.as_ref(), d.shear_deg)?;
    let (img, mask) = if d.flip { flip_horizontal(&img, mask.as_ref()) } else { (img, mask) };
    let img = adjust_contrast(&img, d.contrast)?;
    let img = add_noise(&img, config.noise_sigma, rng)?;
    Ok(ImageSample {
        id: sample.id.clone(),
        pixels: img,
        label: sample.label,
        mask,
    })
}
