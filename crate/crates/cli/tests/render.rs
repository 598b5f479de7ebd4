use glioseg::augment::AugmentConfig;
use glioseg::models::{Arch, Model, ModelSpec, Task};
use glioseg::synthetic::{blob_classification_set, disk_image};
use glioseg::training::{EpochRecord, Phase, TrainConfig, TrainHistory, Trainer};
use glioseg_cli::render::{render_history, render_history_plot, render_overlay, PALETTE, TRAIN_COLOR};
use proptest::prelude::*;
use tempfile::TempDir;

#[test]
fn disk_overlay_paints_exactly_the_mask() {
    let (img, mask) = disk_image(48, (20.0, 26.0), 11.0, 0.7, 0.3);
    let out = render_overlay(&img, &mask, &PALETTE).unwrap();
    for (x, y, px) in out.enumerate_pixels() {
        let painted = px.0[0] != px.0[1] || px.0[1] != px.0[2];
        assert_eq!(painted, mask.get(y as usize, x as usize) != 0, "pixel ({y}, {x})");
    }
}

fn record(epoch: usize, acc: f64) -> EpochRecord {
    EpochRecord {
        epoch,
        train_loss: 1.0 / epoch as f64,
        val_loss: 1.2 / epoch as f64,
        train_acc: acc,
        val_acc: acc * 0.9,
        phase: Phase::Train,
    }
}

#[test]
fn single_epoch_plots_markers() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("h.csv");
    let h = TrainHistory {
        records: vec![record(1, 0.75)],
    };
    h.save_csv(&csv).unwrap();
    let plot = render_history_plot(&csv, &dir.path().join("h.png")).unwrap();
    let (x, y) = plot.accuracy.to_pixel(1.0, 0.75);
    assert_eq!(*plot.image.get_pixel(x, y), TRAIN_COLOR);
    assert_eq!(x, (plot.accuracy.left + plot.accuracy.right) / 2);
    assert!(dir.path().join("h.png").is_file());
}

#[test]
fn overfit_accuracy_peaks_at_the_top_of_the_axis() {
    let data = blob_classification_set(8, 32, 1);
    let model = Model::build(ModelSpec::micro(Arch::Unet, Task::Classify, 2, 8, 32), 1).unwrap();
    let cfg = TrainConfig {
        epochs: 50,
        batch_size: 16,
        augment: AugmentConfig::identity(),
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(model, data.clone(), data, cfg, Phase::Train).unwrap();
    for _ in 0..50 {
        t.run_epoch().unwrap();
    }
    let h = t.history().clone();
    assert_eq!(h.len(), 50);
    assert_eq!(h.last().unwrap().train_acc, 1.0);
    let plot = render_history(&h).unwrap();
    let (x, y) = plot.accuracy.to_pixel(50.0, 1.0);
    assert_eq!(y, plot.accuracy.top);
    assert_eq!(x, plot.accuracy.right);
    assert_eq!(*plot.image.get_pixel(x, y), TRAIN_COLOR);
}

#[test]
fn non_monotone_epochs_rejected() {
    let h = TrainHistory {
        records: vec![record(2, 0.5), record(1, 0.6)],
    };
    assert!(render_history(&h).is_err());
    assert!(render_history(&TrainHistory::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn x_pixels_increase_with_epoch(n in 2usize..80) {
        let h = TrainHistory { records: (1..=n).map(|e| record(e, 0.5)).collect() };
        let plot = render_history(&h).unwrap();
        let xs: Vec<u32> = (1..=n).map(|e| plot.loss.to_pixel(e as f64, 0.0).0).collect();
        prop_assert!(xs.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(xs[0], plot.loss.left);
        prop_assert_eq!(xs[n - 1], plot.loss.right);
    }
}
