//! Pixel grids, segmentation masks and their PNG/JPEG/BMP I/O.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageReader, Luma};

use crate::error::{Error, Result};

/// Row-major intensity grid with interleaved channels.
///
/// Raw decoded images hold values in 0–255; preprocessed grids hold unit-interval
/// values.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Validation(format!(
                "{height}x{width}x{channels} grid needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Single-channel grid from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Validation("ragged rows".into()));
        }
        Self::from_vec(height, width, 1, rows.concat())
    }

    /// Single-channel grid filled from `f(row, col)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let data = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self {
            height,
            width,
            channels: 1,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_empty(&self) -> bool {
        self.height == 0 || self.width == 0
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        self.data[(row * self.width + col) * self.channels + ch] = value;
    }

    /// Same-shaped grid with `f` applied to every value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Mean over all values, accumulated incrementally so constant grids
    /// return their value exactly.
    pub fn mean(&self) -> f64 {
        let mut mean = 0.0;
        for (i, &v) in self.data.iter().enumerate() {
            mean += (v - mean) / (i + 1) as f64;
        }
        mean
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.width * self.channels).map(<[f64]>::to_vec).collect()
    }
}

/// Semantic classes of the segmentation head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
#[repr(u8)]
pub enum TissueClass {
    Background = 0,
    Tumor = 1,
    Edema = 2,
    Healthy = 3,
}

impl TissueClass {
    pub const ALL: [TissueClass; 4] = [
        TissueClass::Background,
        TissueClass::Tumor,
        TissueClass::Edema,
        TissueClass::Healthy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TissueClass::Background => "background",
            TissueClass::Tumor => "tumor",
            TissueClass::Edema => "edema",
            TissueClass::Healthy => "healthy",
        }
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }
}

/// Per-pixel class labels over an image grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl SegmentationMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Validation(format!(
                "{height}x{width} mask needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let labels = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self {
            height,
            width,
            labels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, label: u8) {
        self.labels[row * self.width + col] = label;
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn nonzero_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    /// Labels present at least once, ascending.
    pub fn present_labels(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (0..=255u8).filter(|&l| seen[l as usize]).collect()
    }

    pub fn map(&self, f: impl Fn(u8) -> u8) -> SegmentationMask {
        SegmentationMask {
            labels: self.labels.iter().map(|&l| f(l)).collect(),
            ..self.clone()
        }
    }

    pub fn same_shape(&self, grid: &Grid) -> bool {
        self.height == grid.height() && self.width == grid.width()
    }
}

/// Decodes a raster file into a 0–255 grid with 1 (gray) or 3 (color) channels.
/// Alpha is dropped; 16-bit inputs are rescaled to the 8-bit range.
pub fn read_grid(path: &Path) -> Result<Grid> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Validation(format!("{} has zero area", path.display())));
    }
    let grid = match img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) => {
            let g = img.to_luma8();
            Grid::from_vec(h, w, 1, g.into_raw().into_iter().map(f64::from).collect())?
        }
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => {
            let g = img.to_luma16();
            Grid::from_vec(h, w, 1, g.into_raw().into_iter().map(|v| f64::from(v) / 257.0).collect())?
        }
        other => {
            let rgb = other.to_rgb8();
            Grid::from_vec(h, w, 3, rgb.into_raw().into_iter().map(f64::from).collect())?
        }
    };
    Ok(grid)
}

fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Decode {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

/// Reads only the header; used to screen out unreadable files cheaply.
pub fn probe_dimensions(path: &Path) -> Result<(u32, u32)> {
    ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .into_dimensions()
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

fn save_gray(img: GrayImage, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Decode {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

/// Writes a single-channel grid as 8-bit grayscale PNG. `scale` maps grid
/// values to 0–255 (use 255 for unit-interval grids, 1 for raw grids).
pub fn write_gray_png(grid: &Grid, scale: f64, path: &Path) -> Result<()> {
    if grid.channels() != 1 {
        return Err(Error::Validation(format!(
            "expected a single-channel grid, got {} channels",
            grid.channels()
        )));
    }
    let img = GrayImage::from_fn(grid.width() as u32, grid.height() as u32, |x, y| {
        let v = grid.get(y as usize, x as usize, 0) * scale;
        Luma([v.round().clamp(0.0, 255.0) as u8])
    });
    save_gray(img, path)
}

/// Writes class indices as pixel values of an 8-bit grayscale PNG.
pub fn write_mask_png(mask: &SegmentationMask, path: &Path) -> Result<()> {
    let img = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, mask.labels().to_vec())
        .expect("buffer length matches dimensions");
    save_gray(img, path)
}

pub fn read_mask_png(path: &Path) -> Result<SegmentationMask> {
    let img = decode(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    SegmentationMask::from_vec(h, w, img.into_raw())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_mean_is_exact_on_constants() {
        let g = Grid::filled(17, 13, 1, 0.1);
        assert_eq!(g.mean(), 0.1);
    }

    #[test]
    fn mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mask = SegmentationMask::from_fn(5, 7, |r, c| ((r + c) % 4) as u8);
        write_mask_png(&mask, &path).unwrap();
        assert_eq!(read_mask_png(&path).unwrap(), mask);
        assert_eq!(mask.present_labels(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_grid(Path::new("/definitely/not/here.png")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err:?}");
    }
}
