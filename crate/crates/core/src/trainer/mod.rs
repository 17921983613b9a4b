//! Deterministic desk-scale training: synthetic data, a per-pixel network
//! with hand-rolled backpropagation, Adam, and a staged learning-rate
//! schedule with best-validation-Dice model selection.

mod adam;
mod model;
mod synthetic;

pub use adam::{Adam, AdamParams};
pub use model::{ModelArch, PixelModel};
pub use synthetic::{
    generate_dataset, perturb_gaussian, DataSplits, Dataset, Image, ShapeKind, ShapeSpec,
    SyntheticTask,
};

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calt::{self, CaltError, RawTensor, TensorPayload};
use crate::field::{FieldError, LabelField};
use crate::losses::{compound_loss, LossConfig, LossError};
use crate::metrics::{evaluate_case, MetricError, MetricSettings};

/// RNG stream tags: one root seed, one stream per purpose.
pub(crate) const STREAM_DATA: u64 = 0;
pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_BATCH: u64 = 2;
pub(crate) const STREAM_PERTURB: u64 = 3;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// RNG for the parameter init of one model.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    stream_rng(seed, STREAM_INIT)
}

/// RNG for test-time perturbations.
pub fn perturb_rng(seed: u64) -> ChaCha8Rng {
    stream_rng(seed, STREAM_PERTURB)
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("class coverage failed after {0} retries")]
    ClassCoverage(usize),
    #[error("non-finite loss {value} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        value: f64,
    },
    #[error("model bundle is malformed: {0}")]
    BadModelBundle(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Calt(#[from] CaltError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest parse error: {0}")]
    Json(#[from] serde_json::Error),
}

/// One learning-rate stage, active for epochs below `until_epoch`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrStage {
    pub until_epoch: usize,
    pub lr: f64,
}

/// Epoch count, batch size, optimizer coefficients, and staged learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_stages: Vec<LrStage>,
    #[serde(default)]
    pub adam: AdamParams,
}

impl TrainSchedule {
    /// Desk-scale default: 30 epochs, batch 4, lr 1e-3 then 1e-4 split at 15.
    pub fn desk_default() -> Self {
        Self {
            epochs: 30,
            batch_size: 4,
            lr_stages: vec![
                LrStage {
                    until_epoch: 15,
                    lr: 1e-3,
                },
                LrStage {
                    until_epoch: 30,
                    lr: 1e-4,
                },
            ],
            adam: AdamParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::InvalidSchedule(
                "epochs and batch size must be positive".to_string(),
            ));
        }
        if self.lr_stages.is_empty() {
            return Err(TrainError::InvalidSchedule(
                "need at least one learning-rate stage".to_string(),
            ));
        }
        let mut previous = 0;
        for stage in &self.lr_stages {
            if stage.until_epoch <= previous || stage.until_epoch > self.epochs {
                return Err(TrainError::InvalidSchedule(format!(
                    "stage boundary {} out of order or beyond {} epochs",
                    stage.until_epoch, self.epochs
                )));
            }
            if !(stage.lr.is_finite() && stage.lr >= 0.0) {
                return Err(TrainError::InvalidSchedule(format!(
                    "learning rate {} must be finite and >= 0",
                    stage.lr
                )));
            }
            previous = stage.until_epoch;
        }
        if previous != self.epochs {
            return Err(TrainError::InvalidSchedule(format!(
                "stages end at epoch {previous}, schedule has {} epochs",
                self.epochs
            )));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        for stage in &self.lr_stages {
            if epoch < stage.until_epoch {
                return stage.lr;
            }
        }
        self.lr_stages.last().map(|s| s.lr).unwrap_or(0.0)
    }
}

/// One row of the per-epoch training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dsc: f64,
    pub val_ece: f64,
}

/// A trained model with its log and the selected epoch.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: PixelModel,
    pub log: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_dsc: f64,
}

/// Mean loss over a batch of images and its gradient in parameter space.
///
/// The batch loss is the mean of per-image losses; each image's logit
/// gradient is backpropagated with weight `1 / batch_size`.
pub fn batch_gradient(
    model: &PixelModel,
    images: &[&Image],
    labels: &[&LabelField],
    loss: &LossConfig,
) -> Result<(f64, Vec<f64>), TrainError> {
    let mut grad = vec![0.0; model.params().len()];
    let mut value_sum = 0.0;
    let weight = 1.0 / images.len() as f64;
    for (&image, &label_field) in images.iter().zip(labels) {
        let (logits, hidden) = model.forward_cached(image);
        let eval = compound_loss(loss, &logits, label_field)?;
        value_sum += eval.value;
        model.backward(image, &hidden, &eval.grad, weight, &mut grad);
    }
    Ok((value_sum * weight, grad))
}

/// Mean validation Dice and calibration error of the current parameters.
fn validation_stats(
    model: &PixelModel,
    data: &Dataset,
    settings: &MetricSettings,
) -> Result<(f64, f64), TrainError> {
    let mut dsc_sum = 0.0;
    let mut ece_sum = 0.0;
    for (index, (image, labels)) in data.images.iter().zip(&data.labels).enumerate() {
        let logits = model.predict_logits(image);
        let report = evaluate_case(
            "val",
            &format!("val{index}"),
            &logits,
            None,
            labels,
            settings,
        )?;
        dsc_sum += report.mean_dsc;
        ece_sum += report.ece;
    }
    let n = data.len() as f64;
    Ok((dsc_sum / n, ece_sum / n))
}

/// Train a model under the given loss and schedule.
///
/// Gradients flow from the loss through the model by the chain rule; batches
/// are seed-shuffled per epoch; the returned model is the epoch snapshot with
/// the best validation Dice.
pub fn train(
    mut model: PixelModel,
    data: &DataSplits,
    loss: &LossConfig,
    schedule: &TrainSchedule,
    settings: &MetricSettings,
    seed: u64,
) -> Result<TrainResult, TrainError> {
    schedule.validate()?;
    loss.validate()?;
    let mut shuffle_rng = stream_rng(seed, STREAM_BATCH);
    let mut adam = Adam::new(model.params().len(), schedule.adam);
    let num_train = data.train.len();
    let mut per_image_loss = vec![0.0; num_train];
    let mut log = Vec::with_capacity(schedule.epochs);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;

    for epoch in 0..schedule.epochs {
        let lr = schedule.lr_at(epoch);
        let mut order: Vec<usize> = (0..num_train).collect();
        order.shuffle(&mut shuffle_rng);

        for (batch_index, batch) in order.chunks(schedule.batch_size).enumerate() {
            let images: Vec<&Image> = batch.iter().map(|&i| &data.train.images[i]).collect();
            let labels: Vec<&LabelField> =
                batch.iter().map(|&i| &data.train.labels[i]).collect();
            let mut grad = vec![0.0; model.params().len()];
            let weight = 1.0 / batch.len() as f64;
            for (slot, (&image, &label_field)) in images.iter().zip(&labels).enumerate() {
                let (logits, hidden) = model.forward_cached(image);
                let eval = compound_loss(loss, &logits, label_field)?;
                if !eval.value.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        batch: batch_index,
                        value: eval.value,
                    });
                }
                per_image_loss[batch[slot]] = eval.value;
                model.backward(image, &hidden, &eval.grad, weight, &mut grad);
            }
            adam.step(model.params_mut(), &grad, lr);
        }

        // Summed in dataset order so the log is independent of the shuffle.
        let train_loss = per_image_loss.iter().sum::<f64>() / num_train as f64;
        let (val_dsc, val_ece) = validation_stats(&model, &data.val, settings)?;
        log.push(EpochStats {
            epoch,
            train_loss,
            val_dsc,
            val_ece,
        });
        let improved = match &best {
            Some((best_dsc, _, _)) => val_dsc > *best_dsc,
            None => true,
        };
        if improved {
            best = Some((val_dsc, epoch, model.params().to_vec()));
        }
    }

    let (best_val_dsc, best_epoch, best_params) = best.expect("at least one epoch ran");
    let model = PixelModel::from_params(model.arch(), best_params)
        .expect("snapshot has the right parameter count");
    Ok(TrainResult {
        model,
        log,
        best_epoch,
        best_val_dsc,
    })
}

/// Mean logit vector over the pixels of one ground-truth class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLogitProfile {
    pub class: usize,
    pub pixel_count: usize,
    pub mean_logits: Vec<f64>,
}

/// Per-ground-truth-class mean logit vectors over a dataset, in class order.
///
/// Classes with zero pixels are reported as `None`.
pub fn logit_distance_profile(
    model: &PixelModel,
    data: &Dataset,
) -> Vec<Option<ClassLogitProfile>> {
    let k = model.arch().num_classes;
    let mut sums = vec![vec![0.0; k]; k];
    let mut counts = vec![0usize; k];
    for (image, labels) in data.images.iter().zip(&data.labels) {
        let logits = model.predict_logits(image);
        for pixel in 0..labels.num_pixels() {
            let class = labels.class(pixel);
            counts[class] += 1;
            for (slot, &l) in sums[class].iter_mut().zip(logits.pixel(pixel)) {
                *slot += l;
            }
        }
    }
    (0..k)
        .map(|class| {
            if counts[class] == 0 {
                return None;
            }
            let mean_logits = sums[class]
                .iter()
                .map(|&s| s / counts[class] as f64)
                .collect();
            Some(ClassLogitProfile {
                class,
                pixel_count: counts[class],
                mean_logits,
            })
        })
        .collect()
}

/// Sidecar metadata of a saved model bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub arch: ModelArch,
    pub method: String,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_dsc: f64,
}

/// Write `params.calt` plus `manifest.json` into `dir`.
pub fn save_model(dir: &Path, model: &PixelModel, meta: &ModelMeta) -> Result<(), TrainError> {
    fs::create_dir_all(dir)?;
    let tensor = RawTensor::f64(vec![model.params().len() as u32], model.params().to_vec());
    calt::save_tensor(&tensor, &dir.join("params.calt"))?;
    let manifest = serde_json::to_string_pretty(meta)?;
    fs::write(dir.join("manifest.json"), manifest)?;
    Ok(())
}

/// Load a model bundle saved by [`save_model`].
pub fn load_model(dir: &Path) -> Result<(PixelModel, ModelMeta), TrainError> {
    let manifest = fs::read_to_string(dir.join("manifest.json"))?;
    let meta: ModelMeta = serde_json::from_str(&manifest)?;
    let tensor = calt::load_tensor(&dir.join("params.calt"))?;
    let params = match tensor.payload {
        TensorPayload::F64(values) => values,
        _ => {
            return Err(TrainError::BadModelBundle(
                "params tensor must be f64".to_string(),
            ))
        }
    };
    let model = PixelModel::from_params(meta.arch, params).ok_or_else(|| {
        TrainError::BadModelBundle("parameter count does not match architecture".to_string())
    })?;
    Ok((model, meta))
}

/// Desk-scale model architecture matched to the default task.
pub fn desk_arch(num_classes: usize) -> ModelArch {
    ModelArch {
        patch_radius: 1,
        hidden: 32,
        num_classes,
    }
}

/// Per-epoch log serialized as CSV.
pub fn epoch_log_csv(log: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,val_dsc,val_ece\n");
    for row in log {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch, row.train_loss, row.val_dsc, row.val_ece
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossKind;

    fn quick_task(seed: u64) -> SyntheticTask {
        let mut task = SyntheticTask::desk_default(seed);
        task.height = 16;
        task.width = 16;
        task.noise_sigma = 0.0;
        task.train_images = 6;
        task.val_images = 2;
        task.test_images = 2;
        task.shapes = vec![
            ShapeSpec {
                kind: ShapeKind::Circle,
                min_size: 2,
                max_size: 4,
            },
            ShapeSpec {
                kind: ShapeKind::Rectangle,
                min_size: 2,
                max_size: 3,
            },
            ShapeSpec {
                kind: ShapeKind::Circle,
                min_size: 2,
                max_size: 3,
            },
        ];
        task
    }

    fn quick_schedule(epochs: usize) -> TrainSchedule {
        TrainSchedule {
            epochs,
            batch_size: 4,
            lr_stages: vec![LrStage {
                until_epoch: epochs,
                lr: 1e-3,
            }],
            adam: AdamParams::default(),
        }
    }

    #[test]
    fn schedule_validation_catches_bad_stages() {
        let mut schedule = TrainSchedule::desk_default();
        schedule.lr_stages[1].until_epoch = 10; // out of order
        assert!(schedule.validate().is_err());

        let mut schedule = TrainSchedule::desk_default();
        schedule.lr_stages.pop();
        assert!(schedule.validate().is_err()); // stages end before epochs

        let schedule = TrainSchedule::desk_default();
        assert_eq!(schedule.lr_at(0), 1e-3);
        assert_eq!(schedule.lr_at(14), 1e-3);
        assert_eq!(schedule.lr_at(15), 1e-4);
        assert_eq!(schedule.lr_at(29), 1e-4);
    }

    #[test]
    fn ce_on_noiseless_task_reaches_high_accuracy() {
        let task = quick_task(17);
        let splits = generate_dataset(&task).unwrap();
        let model = PixelModel::init(desk_arch(task.num_classes), &mut init_rng(task.seed));
        let result = train(
            model,
            &splits,
            &LossConfig::new(LossKind::Ce),
            &quick_schedule(20),
            &MetricSettings::default(),
            task.seed,
        )
        .unwrap();
        let mut correct = 0usize;
        let mut total = 0usize;
        for (image, labels) in splits.test.images.iter().zip(&splits.test.labels) {
            let probs = crate::field::softmax(&result.model.predict_logits(image));
            for pixel in 0..labels.num_pixels() {
                total += 1;
                if probs.predicted_class(pixel) == labels.class(pixel) {
                    correct += 1;
                }
            }
        }
        let accuracy = correct as f64 / total as f64;
        assert!(accuracy > 0.99, "test accuracy {accuracy}");
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let task = quick_task(5);
        let splits = generate_dataset(&task).unwrap();
        let model = PixelModel::init(desk_arch(task.num_classes), &mut init_rng(task.seed));
        let before = model.params().to_vec();
        let mut schedule = quick_schedule(3);
        schedule.lr_stages[0].lr = 0.0;
        let result = train(
            model,
            &splits,
            &LossConfig::new(LossKind::Ce),
            &schedule,
            &MetricSettings::default(),
            task.seed,
        )
        .unwrap();
        assert_eq!(result.model.params(), &before[..]);
        // The per-epoch log is constant when nothing moves.
        for row in &result.log[1..] {
            assert_eq!(row.train_loss, result.log[0].train_loss);
            assert_eq!(row.val_dsc, result.log[0].val_dsc);
            assert_eq!(row.val_ece, result.log[0].val_ece);
        }
    }

    #[test]
    fn identical_seeds_give_identical_models() {
        let task = quick_task(23);
        let splits = generate_dataset(&task).unwrap();
        let config = LossConfig::new(LossKind::Ce);
        let schedule = quick_schedule(4);
        let settings = MetricSettings::default();
        let run = |seed| {
            let model = PixelModel::init(desk_arch(task.num_classes), &mut init_rng(seed));
            train(model, &splits, &config, &schedule, &settings, seed)
                .unwrap()
                .model
                .params()
                .to_vec()
        };
        assert_eq!(run(23), run(23));
    }

    #[test]
    fn constant_model_has_identical_profiles() {
        let task = quick_task(2);
        let splits = generate_dataset(&task).unwrap();
        let arch = desk_arch(task.num_classes);
        // Zero weights: logits equal the output bias everywhere.
        let model = PixelModel::from_params(arch, vec![0.0; arch.param_count()]).unwrap();
        let profiles = logit_distance_profile(&model, &splits.test);
        let first = profiles[0].as_ref().unwrap();
        for profile in profiles.iter().flatten() {
            assert_eq!(profile.mean_logits, first.mean_logits);
        }
    }

    #[test]
    fn profile_matches_two_pass_mean() {
        let task = quick_task(31);
        let splits = generate_dataset(&task).unwrap();
        let model = PixelModel::init(desk_arch(task.num_classes), &mut init_rng(9));
        let profiles = logit_distance_profile(&model, &splits.val);

        // Independent streaming pass per class.
        let k = task.num_classes;
        for class in 0..k {
            let mut sum = vec![0.0; k];
            let mut count = 0usize;
            for (image, labels) in splits.val.images.iter().zip(&splits.val.labels) {
                let logits = model.predict_logits(image);
                for pixel in 0..labels.num_pixels() {
                    if labels.class(pixel) == class {
                        count += 1;
                        for (slot, &l) in sum.iter_mut().zip(logits.pixel(pixel)) {
                            *slot += l;
                        }
                    }
                }
            }
            let profile = profiles[class].as_ref().unwrap();
            assert_eq!(profile.pixel_count, count);
            for (a, &s) in profile.mean_logits.iter().zip(&sum) {
                assert!((a - s / count as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn model_bundle_round_trip() {
        let arch = desk_arch(4);
        let model = PixelModel::init(arch, &mut init_rng(77));
        let meta = ModelMeta {
            arch,
            method: "ce".to_string(),
            seed: 77,
            best_epoch: 3,
            best_val_dsc: 0.9,
        };
        let dir = tempfile::tempdir().unwrap();
        let bundle = dir.path().join("model");
        save_model(&bundle, &model, &meta).unwrap();
        let (loaded, loaded_meta) = load_model(&bundle).unwrap();
        assert_eq!(loaded.params(), model.params());
        assert_eq!(loaded_meta, meta);
    }
}
