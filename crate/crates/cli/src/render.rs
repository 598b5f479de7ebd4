//! PNG rendering: translucent mask overlays and training-history plots.

use std::path::Path;

use font8x8::{UnicodeFonts, BASIC_FONTS};
use glioseg::evaluation::MetricsReport;
use glioseg::raster::{Grid, SegmentationMask};
use glioseg::training::TrainHistory;
use glioseg::{Error, Result};
use image::{Rgb, RgbImage};

/// Opacity of class colors painted over the grayscale base.
pub const OVERLAY_ALPHA: f64 = 0.4;

/// Class colors by label. Entry 0 (background) is never painted; labels past
/// the end reuse the non-background colors cyclically.
pub const PALETTE: [[u8; 3]; 9] = [
    [0, 0, 0],
    [230, 25, 75],
    [255, 225, 25],
    [60, 180, 75],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
];

pub fn class_color(palette: &[[u8; 3]], class: u8) -> [u8; 3] {
    let painted = palette.len().saturating_sub(1).max(1);
    palette[1 + (usize::from(class) - 1) % painted]
}

fn gray_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Blends each non-background class color over a unit-interval grayscale
/// image at [`OVERLAY_ALPHA`].
pub fn render_overlay(image: &Grid, mask: &SegmentationMask, palette: &[[u8; 3]]) -> Result<RgbImage> {
    if image.channels() != 1 || !mask.same_shape(image) {
        return Err(Error::Validation(format!(
            "overlay needs a grayscale image and a mask of the same size, got {}x{}x{} and {}x{}",
            image.height(),
            image.width(),
            image.channels(),
            mask.height(),
            mask.width()
        )));
    }
    if palette.len() < 2 {
        return Err(Error::Validation("palette needs at least one non-background color".into()));
    }
    Ok(RgbImage::from_fn(image.width() as u32, image.height() as u32, |x, y| {
        let (r, c) = (y as usize, x as usize);
        let g = gray_byte(image.get(r, c, 0));
        match mask.get(r, c) {
            0 => Rgb([g, g, g]),
            class => {
                let color = class_color(palette, class);
                Rgb(color.map(|ch| ((1.0 - OVERLAY_ALPHA) * f64::from(g) + OVERLAY_ALPHA * f64::from(ch)).round() as u8))
            }
        }
    }))
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Decode {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

pub const TRAIN_COLOR: Rgb<u8> = Rgb([31, 119, 180]);
pub const VAL_COLOR: Rgb<u8> = Rgb([255, 127, 14]);
const AXIS_COLOR: Rgb<u8> = Rgb([0, 0, 0]);
const GRID_COLOR: Rgb<u8> = Rgb([225, 225, 225]);
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);

const PLOT_WIDTH: u32 = 640;
const PANEL_HEIGHT: u32 = 240;
const MARGIN_LEFT: u32 = 64;
const MARGIN_RIGHT: u32 = 96;
const MARGIN_TOP: u32 = 24;
const MARGIN_BOTTOM: u32 = 36;

/// Pixel box of one panel and the data ranges it spans.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axes {
    pub left: u32,
    pub top: u32,
    pub right: u32,
    pub bottom: u32,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

impl Axes {
    /// Pixel for a data point. A degenerate x range maps to the panel centre.
    pub fn to_pixel(&self, x: f64, y: f64) -> (u32, u32) {
        let fx = if self.x_range.1 > self.x_range.0 {
            (x - self.x_range.0) / (self.x_range.1 - self.x_range.0)
        } else {
            0.5
        };
        let fy = ((y - self.y_range.0) / (self.y_range.1 - self.y_range.0)).clamp(0.0, 1.0);
        let px = f64::from(self.left) + fx * f64::from(self.right - self.left);
        let py = f64::from(self.bottom) - fy * f64::from(self.bottom - self.top);
        (px.round() as u32, py.round() as u32)
    }
}

pub struct HistoryPlot {
    pub image: RgbImage,
    pub accuracy: Axes,
    pub loss: Axes,
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn line(img: &mut RgbImage, from: (u32, u32), to: (u32, u32), color: Rgb<u8>) {
    let (mut x, mut y) = (i64::from(from.0), i64::from(from.1));
    let (x1, y1) = (i64::from(to.0), i64::from(to.1));
    let (dx, dy) = ((x1 - x).abs(), -(y1 - y).abs());
    let (sx, sy) = (if x < x1 { 1 } else { -1 }, if y < y1 { 1 } else { -1 });
    let mut err = dx + dy;
    loop {
        put(img, x, y, color);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn marker(img: &mut RgbImage, at: (u32, u32), color: Rgb<u8>) {
    for dy in -2..=2 {
        for dx in -2..=2 {
            put(img, i64::from(at.0) + dx, i64::from(at.1) + dy, color);
        }
    }
}

fn text(img: &mut RgbImage, x: u32, y: u32, s: &str, color: Rgb<u8>) {
    for (i, ch) in s.chars().enumerate() {
        let Some(glyph) = BASIC_FONTS.get(ch) else { continue };
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8 {
                if bits & (1 << col) != 0 {
                    put(img, i64::from(x) + 8 * i as i64 + col, i64::from(y) + row as i64, color);
                }
            }
        }
    }
}

fn text_width(s: &str) -> u32 {
    8 * s.chars().count() as u32
}

fn format_tick(v: f64) -> String {
    if v == v.round() && v.abs() < 1e6 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn draw_panel(img: &mut RgbImage, axes: &Axes, title: &str, series: [(&str, Rgb<u8>, Vec<(f64, f64)>); 2]) {
    for i in 1..4 {
        let y = axes.top + i * (axes.bottom - axes.top) / 4;
        line(img, (axes.left, y), (axes.right, y), GRID_COLOR);
    }
    line(img, (axes.left, axes.top), (axes.left, axes.bottom), AXIS_COLOR);
    line(img, (axes.left, axes.bottom), (axes.right, axes.bottom), AXIS_COLOR);
    for (frac, v) in [(0.0, axes.y_range.0), (1.0, axes.y_range.1)] {
        let label = format_tick(v);
        let y = axes.bottom - (frac * f64::from(axes.bottom - axes.top)) as u32;
        line(img, (axes.left - 4, y), (axes.left, y), AXIS_COLOR);
        text(img, axes.left.saturating_sub(6 + text_width(&label)), y.saturating_sub(4), &label, AXIS_COLOR);
    }
    for v in [axes.x_range.0, axes.x_range.1] {
        let label = format_tick(v);
        let (x, _) = axes.to_pixel(v, axes.y_range.0);
        line(img, (x, axes.bottom), (x, axes.bottom + 4), AXIS_COLOR);
        text(img, x.saturating_sub(text_width(&label) / 2), axes.bottom + 8, &label, AXIS_COLOR);
    }
    text(img, axes.left, axes.top - 16, title, AXIS_COLOR);
    text(
        img,
        (axes.left + axes.right) / 2 - text_width("epoch") / 2,
        axes.bottom + 20,
        "epoch",
        AXIS_COLOR,
    );
    // Validation first so the training curve stays on top where they meet.
    for (i, (name, color, points)) in series.iter().enumerate().rev() {
        let pixels: Vec<(u32, u32)> = points.iter().map(|&(x, y)| axes.to_pixel(x, y)).collect();
        for w in pixels.windows(2) {
            line(img, w[0], w[1], *color);
        }
        for &p in &pixels {
            marker(img, p, *color);
        }
        let ly = axes.top + 8 + 14 * i as u32;
        let lx = axes.right + 12;
        line(img, (lx, ly + 3), (lx + 16, ly + 3), *color);
        text(img, lx + 22, ly, name, AXIS_COLOR);
    }
}

/// Accuracy (top, fixed 0 to 1) and loss (bottom, 0 to the largest loss)
/// against epoch, one curve each for training and validation.
pub fn render_history(history: &TrainHistory) -> Result<HistoryPlot> {
    let records = &history.records;
    if records.is_empty() {
        return Err(Error::Validation("training history has no epochs to plot".into()));
    }
    if records.windows(2).any(|w| w[1].epoch <= w[0].epoch) {
        return Err(Error::Validation("history epochs must be strictly increasing".into()));
    }
    let finite = records
        .iter()
        .all(|r| [r.train_loss, r.val_loss, r.train_acc, r.val_acc].iter().all(|v| v.is_finite()));
    if !finite {
        return Err(Error::Validation("history holds non-finite values".into()));
    }
    let x_range = (records[0].epoch as f64, records[records.len() - 1].epoch as f64);
    let loss_max = records
        .iter()
        .flat_map(|r| [r.train_loss, r.val_loss])
        .fold(0.0f64, f64::max);
    let panel = |index: u32, y_range: (f64, f64)| {
        let top = index * (PANEL_HEIGHT + MARGIN_TOP + MARGIN_BOTTOM) + MARGIN_TOP;
        Axes {
            left: MARGIN_LEFT,
            top,
            right: PLOT_WIDTH - MARGIN_RIGHT,
            bottom: top + PANEL_HEIGHT,
            x_range,
            y_range,
        }
    };
    let accuracy = panel(0, (0.0, 1.0));
    let loss = panel(1, (0.0, if loss_max > 0.0 { loss_max } else { 1.0 }));
    let height = 2 * (PANEL_HEIGHT + MARGIN_TOP + MARGIN_BOTTOM);
    let mut image = RgbImage::from_pixel(PLOT_WIDTH, height, BACKGROUND);
    let series = |f: fn(&glioseg::training::EpochRecord) -> f64| -> Vec<(f64, f64)> {
        records.iter().map(|r| (r.epoch as f64, f(r))).collect()
    };
    draw_panel(
        &mut image,
        &accuracy,
        "accuracy",
        [("train", TRAIN_COLOR, series(|r| r.train_acc)), ("val", VAL_COLOR, series(|r| r.val_acc))],
    );
    draw_panel(
        &mut image,
        &loss,
        "loss",
        [("train", TRAIN_COLOR, series(|r| r.train_loss)), ("val", VAL_COLOR, series(|r| r.val_loss))],
    );
    Ok(HistoryPlot { image, accuracy, loss })
}

/// Reads a history CSV and writes its plot to `out_path`.
pub fn render_history_plot(history_csv: &Path, out_path: &Path) -> Result<HistoryPlot> {
    let history = TrainHistory::load_csv(history_csv)?;
    let plot = render_history(&history)?;
    save_png(&plot.image, out_path)?;
    Ok(plot)
}

/// Confusion matrix as a text grid followed by one line per metric.
pub fn metrics_text(report: &MetricsReport) -> String {
    let cm = &report.confusion;
    let width = [cm.tp, cm.tn, cm.fp, cm.fn_]
        .iter()
        .map(|v| v.to_string().len())
        .max()
        .unwrap_or(1)
        .max("predicted 0".len());
    let mut s = format!(
        "confusion matrix ({} samples, threshold {})\n",
        report.samples, report.threshold
    );
    s += &format!("{:10}  {:>width$}  {:>width$}\n", "", "predicted 0", "predicted 1");
    s += &format!("{:10}  {:>width$}  {:>width$}\n", "actual 0", cm.tn, cm.fp);
    s += &format!("{:10}  {:>width$}  {:>width$}\n", "actual 1", cm.fn_, cm.tp);
    let metrics = [
        ("accuracy", report.accuracy),
        ("precision", report.precision),
        ("sensitivity", report.sensitivity),
        ("f1", report.f1),
    ];
    for (name, value) in metrics {
        s += &match value {
            Some(v) => format!("{name:12} {v:.5}\n"),
            None => format!(
                "{name:12} undefined ({})\n",
                report.undefined.get(name).map_or("no value", String::as_str)
            ),
        };
    }
    if let (Some(d), Some(i)) = (report.dice, report.iou) {
        s += &format!("{:12} {d:.5}\n{:12} {i:.5}\n", "dice", "iou");
    }
    for c in &report.per_class {
        s += &format!("  {:10} dice {:.5} iou {:.5}\n", c.class, c.dice, c.iou);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_mask_is_plain_gray() {
        let img = Grid::from_fn(4, 5, |r, c| (r * 5 + c) as f64 / 19.0);
        let out = render_overlay(&img, &SegmentationMask::new(4, 5), &PALETTE).unwrap();
        for (x, y, p) in out.enumerate_pixels() {
            let g = gray_byte(img.get(y as usize, x as usize, 0));
            assert_eq!(p.0, [g, g, g]);
        }
    }

    #[test]
    fn full_mask_is_uniform_tint() {
        let img = Grid::filled(3, 3, 1, 0.5);
        let mask = SegmentationMask::from_fn(3, 3, |_, _| 1);
        let out = render_overlay(&img, &mask, &PALETTE).unwrap();
        let expect = PALETTE[1].map(|c| (0.6 * 128.0 + 0.4 * f64::from(c)).round() as u8);
        assert!(out.pixels().all(|p| p.0 == expect));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let img = Grid::filled(3, 3, 1, 0.5);
        assert!(matches!(
            render_overlay(&img, &SegmentationMask::new(3, 4), &PALETTE),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn palette_cycles_past_its_end() {
        assert_eq!(class_color(&PALETTE, 1), PALETTE[1]);
        assert_eq!(class_color(&PALETTE, 9), PALETTE[1]);
        assert_eq!(class_color(&PALETTE, 8), PALETTE[8]);
    }

    #[test]
    fn metrics_text_lays_out_the_grid() {
        use glioseg::evaluation::ConfusionMatrix;
        use glioseg::models::Task;
        let r = MetricsReport::from_confusion(Task::Classify, ConfusionMatrix::new(1185, 11, 56, 70), 0.5);
        let text = metrics_text(&r);
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[2].starts_with("actual 0") && lines[2].ends_with("56") && lines[2].contains(" 11 "));
        assert!(lines[3].starts_with("actual 1") && lines[3].ends_with("1185"));
        assert!(text.contains("precision    0.95488"));
        let empty = MetricsReport::from_confusion(Task::Classify, ConfusionMatrix::new(0, 3, 0, 0), 0.5);
        assert!(metrics_text(&empty).contains("precision    undefined ("));
    }

    #[test]
    fn pixel_mapping_hits_panel_corners() {
        let a = Axes {
            left: 10,
            top: 20,
            right: 110,
            bottom: 220,
            x_range: (1.0, 11.0),
            y_range: (0.0, 1.0),
        };
        assert_eq!(a.to_pixel(1.0, 0.0), (10, 220));
        assert_eq!(a.to_pixel(11.0, 1.0), (110, 20));
        assert_eq!(a.to_pixel(6.0, 0.5), (60, 120));
    }
}
