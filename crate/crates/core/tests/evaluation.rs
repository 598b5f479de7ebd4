use glioseg::evaluation::{
    accuracy, confusion_matrix, dice, f1, iou, precision, sensitivity, ConfusionMatrix, MetricsReport,
};
use glioseg::models::Task;
use glioseg::raster::SegmentationMask;
use glioseg::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn golden() -> Value {
    serde_json::from_str(include_str!("fixtures/golden_confusion.json")).unwrap()
}

#[test]
fn golden_counts_reproduce_expected_metrics() {
    let g = golden();
    let cm: ConfusionMatrix = serde_json::from_value(g["confusion"].clone()).unwrap();
    assert_eq!(cm, ConfusionMatrix::new(1185, 11, 56, 70));
    let tol = g["tolerance"].as_f64().unwrap();
    let expect = |k: &str| g["expected"][k].as_f64().unwrap();
    assert!((accuracy(&cm).unwrap() - expect("accuracy")).abs() <= tol);
    assert!((precision(&cm).unwrap() - expect("precision")).abs() <= tol);
    assert!((sensitivity(&cm).unwrap() - expect("sensitivity")).abs() <= tol);
    assert!((f1(&cm).unwrap() - expect("f1")).abs() <= tol);
    // Quoted percentages agree to rounding except accuracy (residual documented in the fixture).
    for k in ["precision", "sensitivity", "f1"] {
        assert!((expect(k) - g["quoted"][k].as_f64().unwrap()).abs() < 1e-4, "{k}");
    }
    let residual = expect("accuracy") - g["quoted"]["accuracy"].as_f64().unwrap();
    assert!((residual - 0.0008).abs() < 0.0001);
    assert_eq!(accuracy(&cm).unwrap(), 1196.0 / 1322.0);
}

#[test]
fn hand_examples() {
    let cm = |tp, tn, fp, fn_| ConfusionMatrix::new(tp, tn, fp, fn_);
    assert_eq!(accuracy(&cm(5, 5, 0, 0)).unwrap(), 1.0);
    assert_eq!(accuracy(&cm(1, 1, 1, 1)).unwrap(), 0.5);
    assert_eq!(precision(&cm(7, 0, 0, 3)).unwrap(), 1.0);
    assert_eq!(precision(&cm(1, 0, 1, 0)).unwrap(), 0.5);
    assert_eq!(sensitivity(&cm(4, 0, 2, 0)).unwrap(), 1.0);
    assert_eq!(sensitivity(&cm(3, 0, 0, 1)).unwrap(), 0.75);
    assert_eq!(f1(&cm(3, 9, 0, 0)).unwrap(), 1.0);
    assert_eq!(f1(&cm(1, 0, 1, 1)).unwrap(), 0.5);
    assert!(matches!(accuracy(&cm(0, 0, 0, 0)), Err(Error::UndefinedMetric { .. })));
    assert!(matches!(f1(&cm(0, 5, 0, 0)), Err(Error::UndefinedMetric { .. })));
}

#[test]
fn perfect_predictor_has_no_errors() {
    let labels = [true, false, false, true, true];
    let probs: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let cm = confusion_matrix(&probs, &labels, 0.5).unwrap();
    assert_eq!((cm.fp, cm.fn_), (0, 0));
}

#[test]
fn f1_is_harmonic_mean_of_precision_and_sensitivity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    for _ in 0..1000 {
        let cm = ConfusionMatrix::new(
            rng.random_range(0..2000),
            rng.random_range(0..2000),
            rng.random_range(0..2000),
            rng.random_range(0..2000),
        );
        let (Ok(p), Ok(s)) = (precision(&cm), sensitivity(&cm)) else {
            continue;
        };
        if p + s == 0.0 {
            continue;
        }
        let harmonic = 2.0 * p * s / (p + s);
        assert!((f1(&cm).unwrap() - harmonic).abs() <= 1e-12, "{cm:?}");
        checked += 1;
    }
    assert!(checked > 990);
}

#[test]
fn dice_examples() {
    let side = 20;
    // A: the top five rows (100 px); B: 50 px of A plus 50 px elsewhere.
    let a = SegmentationMask::from_fn(side, side, |r, _| u8::from(r < 5));
    assert_eq!(a.count(1), 100);
    let half = SegmentationMask::from_fn(side, side, |r, c| u8::from((r < 5 && c >= 10) || (r >= 10 && r < 15 && c < 10)));
    assert_eq!(half.count(1), 100);
    assert_eq!(dice(&a, &half, 1).unwrap(), 0.5);
    assert!((iou(&a, &half, 1).unwrap() - 50.0 / 150.0).abs() < 1e-15);
    assert_eq!(dice(&a, &a, 1).unwrap(), 1.0);
    let disjoint = SegmentationMask::from_fn(side, side, |r, _| u8::from(r >= 15));
    assert_eq!(dice(&a, &disjoint, 1).unwrap(), 0.0);
    let empty = SegmentationMask::new(side, side);
    assert_eq!(dice(&empty, &empty, 1).unwrap(), 1.0);
}

#[test]
fn report_json_is_null_capable() {
    let r = MetricsReport::from_confusion(Task::Classify, ConfusionMatrix::new(0, 3, 0, 0), 0.5);
    let v: Value = serde_json::from_str(&r.to_json()).unwrap();
    assert!(v["precision"].is_null());
    assert!(v["f1"].is_null());
    assert_eq!(v["accuracy"], 1.0);
    assert!(v["undefined"]["precision"].as_str().unwrap().contains("tp + fp"));
}

fn mask_strategy() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
    (
        prop::collection::vec(0u8..3, 64),
        prop::collection::vec(0u8..3, 64),
    )
}

proptest! {
    #[test]
    fn accuracy_symmetric_under_class_swap(tp in 0u64..500, tn in 0u64..500, fp in 0u64..500, fn_ in 0u64..500) {
        prop_assume!(tp + tn + fp + fn_ > 0);
        let a = accuracy(&ConfusionMatrix::new(tp, tn, fp, fn_)).unwrap();
        let b = accuracy(&ConfusionMatrix::new(tn, tp, fn_, fp)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn raising_threshold_is_monotone(
        pairs in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..60),
        t1 in 0.01f64..0.99,
        t2 in 0.01f64..0.99,
    ) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let probs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        let a = confusion_matrix(&probs, &labels, lo).unwrap();
        let b = confusion_matrix(&probs, &labels, hi).unwrap();
        prop_assert!(b.tp <= a.tp);
        prop_assert!(b.tn >= a.tn);
        prop_assert_eq!(a.total(), probs.len() as u64);
    }

    #[test]
    fn dice_symmetric_and_reflexive((a, b) in mask_strategy(), class in 0u8..3) {
        let a = SegmentationMask::from_vec(8, 8, a).unwrap();
        let b = SegmentationMask::from_vec(8, 8, b).unwrap();
        prop_assert_eq!(dice(&a, &b, class).unwrap(), dice(&b, &a, class).unwrap());
        prop_assert_eq!(dice(&a, &a, class).unwrap(), 1.0);
        let d = dice(&a, &b, class).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
    }
}
