//! Mini-batch training with Adam, checkpointing and per-epoch history.

mod adam;
pub mod checkpoint;
mod history;

use std::path::PathBuf;

use glioseg_nn::{Grads, Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, load_checkpoint_as, save_checkpoint};
pub use history::{EpochRecord, Phase, TrainHistory};

use crate::augment::{self, AugmentConfig};
use crate::dataset::{DatasetManifest, ImageSample, Split};
use crate::error::{Error, Result};
use crate::inputs;
use crate::models::{Model, Task};

/// Probability clamp used by [`bce_loss`].
pub const BCE_EPSILON: f64 = 1e-7;

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Drives mini-batch shuffling and, mixed with `augment.seed`, augmentation draws.
    pub seed: u64,
    pub augment: AugmentConfig,
    /// Stop after this many epochs without a new best validation loss.
    pub early_stop_patience: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            augment: AugmentConfig::default(),
            early_stop_patience: None,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")))
            }
        };
        open_unit("adam_beta1", self.adam_beta1)?;
        open_unit("adam_beta2", self.adam_beta2)?;
        if !(self.adam_epsilon > 0.0 && self.adam_epsilon.is_finite()) {
            return Err(Error::Config(format!("adam_epsilon must be positive, got {}", self.adam_epsilon)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.early_stop_patience == Some(0) {
            return Err(Error::Config("early_stop_patience must be at least 1".into()));
        }
        self.augment.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Hyperparameter overrides for fine-tuning; unset fields keep the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigDelta {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_epsilon: Option<f64>,
    pub seed: Option<u64>,
    pub augment: Option<AugmentConfig>,
    pub early_stop_patience: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl ConfigDelta {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            adam_beta1: self.adam_beta1.unwrap_or(base.adam_beta1),
            adam_beta2: self.adam_beta2.unwrap_or(base.adam_beta2),
            adam_epsilon: self.adam_epsilon.unwrap_or(base.adam_epsilon),
            seed: self.seed.unwrap_or(base.seed),
            augment: self.augment.clone().unwrap_or_else(|| base.augment.clone()),
            early_stop_patience: self.early_stop_patience.or(base.early_stop_patience),
            checkpoint_dir: self.checkpoint_dir.clone().or_else(|| base.checkpoint_dir.clone()),
        }
    }
}

/// Mean binary cross-entropy of probabilities against 0/1 targets, with
/// probabilities clamped to `[ε, 1 − ε]`.
pub fn bce_loss(probabilities: &Tensor, targets: &Tensor) -> Result<f64> {
    if probabilities.shape() != targets.shape() {
        return Err(Error::Validation(format!(
            "probabilities {:?} and targets {:?} differ in shape",
            probabilities.shape(),
            targets.shape()
        )));
    }
    if probabilities.numel() == 0 {
        return Err(Error::Validation("bce_loss of an empty batch".into()));
    }
    let mut mean = 0.0;
    for (i, (&p, &y)) in probabilities.data().iter().zip(targets.data()).enumerate() {
        let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
        let l = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        mean += (l - mean) / (i + 1) as f64;
    }
    Ok(mean)
}

/// Images per forward/backward pass. Larger mini-batches are processed in
/// chunks of this size and their gradients combined, which bounds memory at
/// full resolution without changing the result (there is no batch coupling).
fn chunk_size(side: usize) -> usize {
    ((1usize << 16) / (side * side).max(1)).max(1)
}

fn task_loss(g: &mut Graph, model: &Model, y: glioseg_nn::Var, chunk: &[&ImageSample]) -> Result<glioseg_nn::Var> {
    Ok(match model.spec.task {
        Task::Classify => g.bce_with_logits(y, &inputs::label_targets(chunk))?,
        Task::Segment => g.softmax_cross_entropy(y, &inputs::pixel_targets(chunk, &model.spec)?)?,
    })
}

/// Mean loss over `batch` and its gradient.
pub fn batch_gradient(model: &Model, batch: &[&ImageSample]) -> Result<(f64, Grads)> {
    let mut grads = Grads::default();
    let mut loss = 0.0;
    for chunk in batch.chunks(chunk_size(model.spec.input_side)) {
        let w = chunk.len() as f64 / batch.len() as f64;
        let mut g = Graph::new(&model.params);
        let x = g.input(inputs::image_batch(chunk, &model.spec)?);
        let y = model.forward_graph(&mut g, x)?;
        let l = task_loss(&mut g, model, y, chunk)?;
        loss += w * g.value(l).item();
        grads.add_scaled(&g.backward(l)?, w);
    }
    Ok((loss, grads))
}

/// Mean loss and accuracy over `samples` in inference mode. Accuracy is the
/// fraction of correct images (classification, probability ≥ 0.5 means
/// tumorous) or of correct pixels (segmentation).
pub fn measure(model: &Model, samples: &[ImageSample]) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut total = 0usize;
    let refs: Vec<&ImageSample> = samples.iter().collect();
    for chunk in refs.chunks(chunk_size(model.spec.input_side)) {
        let w = chunk.len() as f64 / samples.len() as f64;
        let mut g = Graph::new(&model.params);
        let x = g.input(inputs::image_batch(chunk, &model.spec)?);
        let y = model.forward_graph(&mut g, x)?;
        let l = task_loss(&mut g, model, y, chunk)?;
        loss += w * g.value(l).item();
        match model.spec.task {
            Task::Classify => {
                for (z, s) in g.value(y).data().iter().zip(chunk) {
                    correct += usize::from((*z >= 0.0) == (s.label.as_u8() == 1));
                    total += 1;
                }
            }
            Task::Segment => {
                let preds = inputs::argmax_masks(g.value(y))?;
                for (p, s) in preds.iter().zip(chunk) {
                    let t = inputs::target_mask(s, model.spec.num_classes)?;
                    correct += p.labels().iter().zip(t.labels()).filter(|(a, b)| a == b).count();
                    total += t.labels().len();
                }
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::Config("cannot measure an empty sample set".into()));
    }
    Ok((loss, correct as f64 / total as f64))
}

fn augment_stream(config: &TrainConfig, epoch: usize, index: usize) -> ChaCha8Rng {
    let seed = config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ config.augment.seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

/// Epoch-by-epoch training driver. [`train`] and [`fine_tune`] run it to
/// completion; callers that need to inspect progress can step it directly.
pub struct Trainer {
    model: Model,
    config: TrainConfig,
    train: Vec<ImageSample>,
    val: Vec<ImageSample>,
    optimizer: AdamState,
    optimizer_steps: u64,
    shuffle_rng: ChaCha8Rng,
    phase: Phase,
    history: TrainHistory,
    best_val: f64,
    stale_epochs: usize,
}

impl Trainer {
    pub fn new(model: Model, train: Vec<ImageSample>, val: Vec<ImageSample>, config: TrainConfig, phase: Phase) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        if val.is_empty() {
            return Err(Error::Config("validation split is empty".into()));
        }
        inputs::check_task_inputs(&train, &model.spec)?;
        inputs::check_task_inputs(&val, &model.spec)?;
        let optimizer = AdamState::new(&model.params);
        let shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            model,
            config,
            train,
            val,
            optimizer,
            optimizer_steps: 0,
            shuffle_rng,
            phase,
            history: TrainHistory::default(),
            best_val: f64::INFINITY,
            stale_epochs: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn train_samples(&self) -> &[ImageSample] {
        &self.train
    }

    /// True once early stopping has triggered.
    pub fn should_stop(&self) -> bool {
        self.config
            .early_stop_patience
            .is_some_and(|p| self.stale_epochs >= p)
    }

    /// Runs one epoch and returns its history record.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.history.len() + 1;
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let augmenting = !self.config.augment.is_identity();
        let mut epoch_loss = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            let augmented: Vec<ImageSample> = if augmenting {
                batch
                    .iter()
                    .map(|&i| {
                        let mut rng = augment_stream(&self.config, epoch, i);
                        augment::sample_and_apply(&self.train[i], &self.config.augment, &mut rng)
                    })
                    .collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            let refs: Vec<&ImageSample> = if augmenting {
                augmented.iter().collect()
            } else {
                batch.iter().map(|&i| &self.train[i]).collect()
            };
            let (loss, grads) = batch_gradient(&self.model, &refs)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite loss {loss} in epoch {epoch}")));
            }
            self.optimizer_steps += 1;
            adam_step(
                &mut self.model.params,
                &grads,
                &mut self.optimizer,
                &self.config,
                self.optimizer_steps,
            )?;
            self.model.steps_trained += 1;
            epoch_loss += loss * batch.len() as f64;
        }
        let train_loss = epoch_loss / self.train.len() as f64;
        let (_, train_acc) = measure(&self.model, &self.train)?;
        let (val_loss, val_acc) = measure(&self.model, &self.val)?;
        if !(val_loss.is_finite() && train_loss.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite loss after epoch {epoch} (train {train_loss}, validation {val_loss})"
            )));
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            train_acc,
            val_acc,
            phase: self.phase,
        };
        let improved = val_loss < self.best_val;
        if improved {
            self.best_val = val_loss;
            self.stale_epochs = 0;
        } else {
            self.stale_epochs += 1;
        }
        if let Some(dir) = &self.config.checkpoint_dir {
            save_checkpoint(&self.model, &dir.join(LAST_CHECKPOINT))?;
            if improved {
                save_checkpoint(&self.model, &dir.join(BEST_CHECKPOINT))?;
            }
        }
        log::info!(
            "epoch {epoch}: train_loss {train_loss:.5} val_loss {val_loss:.5} train_acc {train_acc:.4} val_acc {val_acc:.4}"
        );
        self.history.records.push(record.clone());
        Ok(record)
    }

    /// Runs the configured number of epochs, honouring early stopping.
    pub fn run(mut self) -> Result<(Model, TrainHistory)> {
        for _ in 0..self.config.epochs {
            self.run_epoch()?;
            if self.should_stop() {
                log::info!("early stopping after epoch {}", self.history.len());
                break;
            }
        }
        Ok((self.model, self.history))
    }
}

/// Trains on the manifest's train split, validating on its validation split.
/// Stored images must already be preprocessed to the model's input size.
pub fn train(model: Model, manifest: &DatasetManifest, config: &TrainConfig) -> Result<(Model, TrainHistory)> {
    config.validate()?;
    if config.epochs == 0 {
        return Ok((model, TrainHistory::default()));
    }
    let train = inputs::load_model_inputs(manifest, Split::Train, &model.spec)?;
    let val = inputs::load_model_inputs(manifest, Split::Validation, &model.spec)?;
    train_samples(model, train, val, config)
}

/// [`train`] over in-memory unit-interval samples.
pub fn train_samples(
    model: Model,
    train: Vec<ImageSample>,
    val: Vec<ImageSample>,
    config: &TrainConfig,
) -> Result<(Model, TrainHistory)> {
    config.validate()?;
    if config.epochs == 0 {
        return Ok((model, TrainHistory::default()));
    }
    Trainer::new(model, train, val, config.clone(), Phase::Train)?.run()
}

/// Continues training a trained model with overridden hyperparameters and a
/// fresh optimizer state. Records are marked with [`Phase::FineTune`].
pub fn fine_tune(
    model: Model,
    manifest: &DatasetManifest,
    base: &TrainConfig,
    delta: &ConfigDelta,
) -> Result<(Model, TrainHistory)> {
    ensure_trained(&model)?;
    let train = inputs::load_model_inputs(manifest, Split::Train, &model.spec)?;
    let val = inputs::load_model_inputs(manifest, Split::Validation, &model.spec)?;
    fine_tune_samples(model, train, val, base, delta)
}

pub fn fine_tune_samples(
    model: Model,
    train: Vec<ImageSample>,
    val: Vec<ImageSample>,
    base: &TrainConfig,
    delta: &ConfigDelta,
) -> Result<(Model, TrainHistory)> {
    ensure_trained(&model)?;
    let config = delta.apply(base);
    config.validate()?;
    if config.epochs == 0 {
        return Ok((model, TrainHistory::default()));
    }
    Trainer::new(model, train, val, config, Phase::FineTune)?.run()
}

fn ensure_trained(model: &Model) -> Result<()> {
    if model.steps_trained == 0 {
        return Err(Error::Precondition(
            "fine-tuning needs a trained model (load a checkpoint first)".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_examples() {
        let t = |v: Vec<f64>| Tensor::from_vec(&[v.len(), 1], v).unwrap();
        assert!((bce_loss(&t(vec![0.5, 0.5]), &t(vec![0.0, 1.0])).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(bce_loss(&t(vec![1.0, 0.0]), &t(vec![1.0, 0.0])).unwrap() <= 1.2e-7);
        assert!((bce_loss(&t(vec![0.9]), &t(vec![1.0])).unwrap() - 0.10536051565782628).abs() < 1e-12);
        assert!(matches!(
            bce_loss(&t(vec![0.9]), &t(vec![1.0, 0.0])),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn config_validation_and_json() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            adam_beta1: 1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let cfg = TrainConfig::from_json(r#"{"epochs": 3, "learning_rate": 0.01}"#).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.batch_size, 16);
        assert!(TrainConfig::from_json(r#"{"epoch": 3}"#).is_err());
    }

    #[test]
    fn empty_delta_keeps_base() {
        let base = TrainConfig {
            epochs: 7,
            ..TrainConfig::default()
        };
        assert_eq!(ConfigDelta::default().apply(&base), base);
        let d = ConfigDelta {
            learning_rate: Some(1e-4),
            ..ConfigDelta::default()
        };
        assert_eq!(d.apply(&base).learning_rate, 1e-4);
    }

    #[test]
    fn chunking_bounds_pixels() {
        assert_eq!(chunk_size(32), 64);
        assert_eq!(chunk_size(256), 1);
        assert_eq!(chunk_size(1024), 1);
    }
}
