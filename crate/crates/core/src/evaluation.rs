//! Confusion-matrix metrics, mask overlap scores and model evaluation reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, ImageSample, Split};
use crate::error::{Error, Result};
use crate::inputs;
use crate::models::{Model, Task};
use crate::raster::{SegmentationMask, TissueClass};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Images per inference batch during evaluation.
const EVAL_BATCH: usize = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    Ok(())
}

/// Counts outcomes with the rule "predict positive iff probability ≥ threshold".
pub fn confusion_matrix(probabilities: &[f64], labels: &[bool], threshold: f64) -> Result<ConfusionMatrix> {
    check_threshold(threshold)?;
    if probabilities.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} probabilities but {} labels",
            probabilities.len(),
            labels.len()
        )));
    }
    if probabilities.is_empty() {
        return Err(Error::Validation("no predictions to score".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &y) in probabilities.iter().zip(labels) {
        if !p.is_finite() {
            return Err(Error::Validation(format!("non-finite probability {p}")));
        }
        cm.record(p >= threshold, y);
    }
    Ok(cm)
}

fn ratio(metric: &'static str, num: u64, den: u64, what: &str) -> Result<f64> {
    if den == 0 {
        return Err(Error::UndefinedMetric {
            metric,
            reason: format!("{what} is zero"),
        });
    }
    Ok(num as f64 / den as f64)
}

/// (TN + TP) / (TN + TP + FP + FN)
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    ratio("accuracy", cm.tn + cm.tp, cm.total(), "total count")
}

/// TP / (TP + FP)
pub fn precision(cm: &ConfusionMatrix) -> Result<f64> {
    ratio("precision", cm.tp, cm.tp + cm.fp, "tp + fp")
}

/// TP / (TP + FN), also called recall.
pub fn sensitivity(cm: &ConfusionMatrix) -> Result<f64> {
    ratio("sensitivity", cm.tp, cm.tp + cm.fn_, "tp + fn")
}

/// 2·TP / (2·TP + FP + FN)
pub fn f1(cm: &ConfusionMatrix) -> Result<f64> {
    ratio("f1", 2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn_, "2tp + fp + fn")
}

/// Pixel counts for one class: |A∩B|, |A|, |B|.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OverlapCounts {
    pub intersection: u64,
    pub predicted: u64,
    pub actual: u64,
}

impl OverlapCounts {
    pub fn measure(pred: &SegmentationMask, truth: &SegmentationMask, class_id: u8) -> Result<Self> {
        if pred.height() != truth.height() || pred.width() != truth.width() {
            return Err(Error::Validation(format!(
                "mask shapes differ: {}x{} vs {}x{}",
                pred.height(),
                pred.width(),
                truth.height(),
                truth.width()
            )));
        }
        let mut c = OverlapCounts::default();
        for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
            let (a, b) = (p == class_id, t == class_id);
            c.predicted += u64::from(a);
            c.actual += u64::from(b);
            c.intersection += u64::from(a && b);
        }
        Ok(c)
    }

    pub fn add(&mut self, other: OverlapCounts) {
        self.intersection += other.intersection;
        self.predicted += other.predicted;
        self.actual += other.actual;
    }

    /// 2|A∩B| / (|A| + |B|), 1 when both sets are empty.
    pub fn dice(&self) -> f64 {
        let den = self.predicted + self.actual;
        if den == 0 {
            1.0
        } else {
            2.0 * self.intersection as f64 / den as f64
        }
    }

    /// |A∩B| / |A∪B|, 1 when both sets are empty.
    pub fn iou(&self) -> f64 {
        let union = self.predicted + self.actual - self.intersection;
        if union == 0 {
            1.0
        } else {
            self.intersection as f64 / union as f64
        }
    }
}

pub fn dice(pred: &SegmentationMask, truth: &SegmentationMask, class_id: u8) -> Result<f64> {
    Ok(OverlapCounts::measure(pred, truth, class_id)?.dice())
}

pub fn iou(pred: &SegmentationMask, truth: &SegmentationMask, class_id: u8) -> Result<f64> {
    Ok(OverlapCounts::measure(pred, truth, class_id)?.iou())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassOverlap {
    pub class: String,
    pub dice: f64,
    pub iou: f64,
}

/// Metrics for one evaluated split. Metrics with a zero denominator are
/// `null`, and the reason is listed under `undefined`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub split: Option<Split>,
    pub samples: usize,
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub sensitivity: Option<f64>,
    pub f1: Option<f64>,
    /// Tumor-class overlap for segmentation.
    pub dice: Option<f64>,
    pub iou: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub per_class: Vec<ClassOverlap>,
    pub undefined: BTreeMap<String, String>,
    pub checkpoint_id: Option<String>,
    pub manifest_hash: Option<String>,
}

impl MetricsReport {
    pub fn from_confusion(task: Task, cm: ConfusionMatrix, threshold: f64) -> Self {
        let mut undefined = BTreeMap::new();
        let mut keep = |r: Result<f64>| match r {
            Ok(v) => Some(v),
            Err(Error::UndefinedMetric { metric, reason }) => {
                undefined.insert(metric.to_string(), reason);
                None
            }
            Err(e) => unreachable!("metric functions only fail as undefined: {e}"),
        };
        let accuracy = keep(accuracy(&cm));
        let precision = keep(precision(&cm));
        let sensitivity = keep(sensitivity(&cm));
        let f1 = keep(f1(&cm));
        Self {
            task,
            split: None,
            samples: 0,
            threshold,
            confusion: cm,
            accuracy,
            precision,
            sensitivity,
            f1,
            dice: None,
            iou: None,
            per_class: Vec::new(),
            undefined,
            checkpoint_id: None,
            manifest_hash: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Scores a manifest split without augmentation.
pub fn evaluate_model(model: &Model, manifest: &DatasetManifest, split: Split, threshold: f64) -> Result<MetricsReport> {
    check_threshold(threshold)?;
    let samples = inputs::load_model_inputs(manifest, split, &model.spec)?;
    if samples.is_empty() {
        return Err(Error::Config(format!("split `{split:?}` is empty")));
    }
    let mut report = evaluate_samples(model, &samples, threshold)?;
    report.split = Some(split);
    Ok(report)
}

/// Scores unit-interval samples already at the model's input size.
pub fn evaluate_samples(model: &Model, samples: &[ImageSample], threshold: f64) -> Result<MetricsReport> {
    check_threshold(threshold)?;
    if samples.is_empty() {
        return Err(Error::Config("no samples to evaluate".into()));
    }
    inputs::check_task_inputs(samples, &model.spec)?;
    let mut report = match model.spec.task {
        Task::Classify => {
            let probs = classify_probabilities(model, samples)?;
            let labels: Vec<bool> = samples.iter().map(|s| s.label.as_u8() == 1).collect();
            let cm = confusion_matrix(&probs, &labels, threshold)?;
            MetricsReport::from_confusion(Task::Classify, cm, threshold)
        }
        Task::Segment => segment_report(model, samples, threshold)?,
    };
    report.samples = samples.len();
    Ok(report)
}

/// Sigmoid probabilities of the tumorous class, one per sample.
pub fn classify_probabilities(model: &Model, samples: &[ImageSample]) -> Result<Vec<f64>> {
    let mut probs = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&ImageSample> = chunk.iter().collect();
        let logits = model.forward(&inputs::image_batch(&refs, &model.spec)?)?;
        probs.extend(logits.data().iter().map(|&z| glioseg_nn::sigmoid(z)));
    }
    Ok(probs)
}

/// Argmax class masks, one per sample.
pub fn predict_masks(model: &Model, samples: &[ImageSample]) -> Result<Vec<SegmentationMask>> {
    let mut masks = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&ImageSample> = chunk.iter().collect();
        let logits = model.forward(&inputs::image_batch(&refs, &model.spec)?)?;
        masks.extend(inputs::argmax_masks(&logits)?);
    }
    Ok(masks)
}

fn segment_report(model: &Model, samples: &[ImageSample], threshold: f64) -> Result<MetricsReport> {
    let classes = model.spec.num_classes;
    let predictions = predict_masks(model, samples)?;
    let tumor = TissueClass::Tumor as u8;
    let mut overlaps = vec![OverlapCounts::default(); classes];
    let mut cm = ConfusionMatrix::default();
    for (sample, pred) in samples.iter().zip(&predictions) {
        let truth = inputs::target_mask(sample, classes)?;
        for (k, o) in overlaps.iter_mut().enumerate() {
            o.add(OverlapCounts::measure(pred, &truth, k as u8)?);
        }
        for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
            cm.record(p == tumor, t == tumor);
        }
    }
    let mut report = MetricsReport::from_confusion(Task::Segment, cm, threshold);
    if let Some(t) = overlaps.get(usize::from(tumor)) {
        report.dice = Some(t.dice());
        report.iou = Some(t.iou());
    }
    report.per_class = overlaps
        .iter()
        .enumerate()
        .map(|(k, o)| ClassOverlap {
            class: TissueClass::from_index(k as u8).map_or_else(|| format!("class{k}"), |c| c.name().to_string()),
            dice: o.dice(),
            iou: o.iou(),
        })
        .collect();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_tie_predicts_positive() {
        let cm = confusion_matrix(&[0.5; 4], &[true, false, true, false], 0.5).unwrap();
        assert_eq!(cm, ConfusionMatrix::new(2, 0, 2, 0));
    }

    #[test]
    fn six_sample_example() {
        let probs = [0.9, 0.8, 0.3, 0.6, 0.2, 0.1];
        let labels = [true, true, true, false, false, false];
        let cm = confusion_matrix(&probs, &labels, 0.5).unwrap();
        assert_eq!(cm, ConfusionMatrix::new(2, 2, 1, 1));
    }

    #[test]
    fn undefined_metrics_are_errors_not_zero() {
        let cm = ConfusionMatrix::new(0, 4, 0, 0);
        assert!(matches!(precision(&cm), Err(Error::UndefinedMetric { metric: "precision", .. })));
        let r = MetricsReport::from_confusion(Task::Classify, cm, 0.5);
        assert_eq!(r.precision, None);
        assert!(r.undefined.contains_key("precision"));
        assert!(r.undefined.contains_key("sensitivity"));
        assert_eq!(r.accuracy, Some(1.0));
        let json = r.to_json();
        assert!(json.contains("\"precision\": null"));
        assert!(json.contains("\"fn\": 0"));
    }

    #[test]
    fn bad_inputs() {
        assert!(matches!(confusion_matrix(&[0.1], &[true, false], 0.5), Err(Error::Validation(_))));
        assert!(matches!(confusion_matrix(&[0.1], &[true], 1.0), Err(Error::Config(_))));
        let a = SegmentationMask::new(2, 2);
        let b = SegmentationMask::new(2, 3);
        assert!(matches!(dice(&a, &b, 1), Err(Error::Validation(_))));
    }
}
