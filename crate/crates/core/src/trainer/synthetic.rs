//! Seeded synthetic multi-class segmentation tasks: one geometric primitive
//! per foreground class on a flat background, each class with its own base
//! intensity, plus Gaussian pixel noise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::field::LabelField;
use crate::trainer::{stream_rng, TrainError, STREAM_DATA};

/// A grayscale image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn from_data(height: usize, width: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == height * width).then_some(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Geometric primitive drawn for one foreground class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Circle,
    Rectangle,
}

/// Size range of one class's primitive, in pixels (radius or half-extent).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub min_size: usize,
    pub max_size: usize,
}

/// Full description of a synthetic segmentation task; dataset generation is a
/// pure function of this value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTask {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    /// Standard deviation of the additive pixel noise.
    pub noise_sigma: f64,
    pub train_images: usize,
    pub val_images: usize,
    pub test_images: usize,
    /// One primitive spec per foreground class (classes `1..K`).
    pub shapes: Vec<ShapeSpec>,
}

/// Minimum pixels per class per image for a draw to count as covered.
const MIN_CLASS_PIXELS: usize = 4;
/// Fresh shape draws per image before giving up on class coverage.
const MAX_IMAGE_RETRIES: usize = 100;

impl SyntheticTask {
    /// Desk-scale defaults: 32x32 images, four classes, three primitives.
    pub fn desk_default(seed: u64) -> Self {
        Self {
            seed,
            height: 32,
            width: 32,
            num_classes: 4,
            noise_sigma: 0.08,
            train_images: 24,
            val_images: 6,
            test_images: 6,
            shapes: vec![
                ShapeSpec {
                    kind: ShapeKind::Circle,
                    min_size: 3,
                    max_size: 7,
                },
                ShapeSpec {
                    kind: ShapeKind::Rectangle,
                    min_size: 3,
                    max_size: 6,
                },
                ShapeSpec {
                    kind: ShapeKind::Circle,
                    min_size: 2,
                    max_size: 5,
                },
            ],
        }
    }

    /// Base intensity of one class: evenly spaced interior points of [0, 1],
    /// so with zero noise the intensity determines the class exactly.
    pub fn class_intensity(&self, class: usize) -> f64 {
        (class as f64 + 0.5) / self.num_classes as f64
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.num_classes < 2 {
            return Err(TrainError::InvalidTask(
                "need at least 2 classes".to_string(),
            ));
        }
        if self.shapes.len() != self.num_classes - 1 {
            return Err(TrainError::InvalidTask(format!(
                "need one shape per foreground class: {} shapes for {} classes",
                self.shapes.len(),
                self.num_classes
            )));
        }
        if self.train_images == 0 || self.val_images == 0 || self.test_images == 0 {
            return Err(TrainError::InvalidTask(
                "every split needs at least one image".to_string(),
            ));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(TrainError::InvalidTask(format!(
                "noise sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        for (index, shape) in self.shapes.iter().enumerate() {
            if shape.min_size < 2 || shape.max_size < shape.min_size {
                return Err(TrainError::InvalidTask(format!(
                    "shape {index}: sizes must satisfy 2 <= min <= max"
                )));
            }
            if 2 * shape.max_size + 2 >= self.height.min(self.width) {
                return Err(TrainError::InvalidTask(format!(
                    "shape {index}: max size {} does not fit a {}x{} image",
                    shape.max_size, self.height, self.width
                )));
            }
        }
        Ok(())
    }
}

/// One split of generated cases.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub labels: Vec<LabelField>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Train/validation/test splits of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

fn rasterize_shape(
    task: &SyntheticTask,
    spec: &ShapeSpec,
    class: u32,
    rng: &mut ChaCha8Rng,
    labels: &mut [u32],
) {
    let (height, width) = (task.height, task.width);
    match spec.kind {
        ShapeKind::Circle => {
            let radius = rng.random_range(spec.min_size..=spec.max_size);
            let cy = rng.random_range(radius..height - radius);
            let cx = rng.random_range(radius..width - radius);
            let r2 = (radius * radius) as isize;
            for y in cy - radius..=cy + radius {
                for x in cx - radius..=cx + radius {
                    let dy = y as isize - cy as isize;
                    let dx = x as isize - cx as isize;
                    if dy * dy + dx * dx <= r2 {
                        labels[y * width + x] = class;
                    }
                }
            }
        }
        ShapeKind::Rectangle => {
            let half_h = rng.random_range(spec.min_size..=spec.max_size);
            let half_w = rng.random_range(spec.min_size..=spec.max_size);
            let cy = rng.random_range(half_h..height - half_h);
            let cx = rng.random_range(half_w..width - half_w);
            for y in cy - half_h..=cy + half_h {
                for x in cx - half_w..=cx + half_w {
                    labels[y * width + x] = class;
                }
            }
        }
    }
}

fn generate_image(task: &SyntheticTask, rng: &mut ChaCha8Rng) -> Result<(Image, LabelField), TrainError> {
    let pixels = task.height * task.width;
    for _ in 0..MAX_IMAGE_RETRIES {
        let mut labels = vec![0u32; pixels];
        for (index, spec) in task.shapes.iter().enumerate() {
            rasterize_shape(task, spec, (index + 1) as u32, rng, &mut labels);
        }
        let mut histogram = vec![0usize; task.num_classes];
        for &label in &labels {
            histogram[label as usize] += 1;
        }
        if histogram.iter().any(|&count| count < MIN_CLASS_PIXELS) {
            continue;
        }
        let mut data = Vec::with_capacity(pixels);
        for &label in &labels {
            let mut value = task.class_intensity(label as usize);
            if task.noise_sigma > 0.0 {
                let noise: f64 = rng.sample(StandardNormal);
                value += task.noise_sigma * noise;
            }
            data.push(value.clamp(0.0, 1.0));
        }
        let image = Image {
            height: task.height,
            width: task.width,
            data,
        };
        let label_field = LabelField::new(task.height, task.width, task.num_classes, 0, labels)?;
        return Ok((image, label_field));
    }
    Err(TrainError::ClassCoverage(MAX_IMAGE_RETRIES))
}

fn generate_split(
    task: &SyntheticTask,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset, TrainError> {
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let (image, label_field) = generate_image(task, rng)?;
        images.push(image);
        labels.push(label_field);
    }
    Ok(Dataset { images, labels })
}

/// Generate the train/val/test splits, bit-reproducibly from the task seed.
pub fn generate_dataset(task: &SyntheticTask) -> Result<DataSplits, TrainError> {
    task.validate()?;
    let mut rng = stream_rng(task.seed, STREAM_DATA);
    Ok(DataSplits {
        train: generate_split(task, task.train_images, &mut rng)?,
        val: generate_split(task, task.val_images, &mut rng)?,
        test: generate_split(task, task.test_images, &mut rng)?,
    })
}

/// Add i.i.d. Gaussian noise and clamp to `[0, 1]`; sigma 0 is the identity.
pub fn perturb_gaussian(
    images: &[Image],
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Image>, TrainError> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(TrainError::InvalidTask(format!(
            "perturbation sigma must be finite and >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(images.to_vec());
    }
    Ok(images
        .iter()
        .map(|image| {
            let data = image
                .data
                .iter()
                .map(|&value| {
                    let noise: f64 = rng.sample(StandardNormal);
                    (value + sigma * noise).clamp(0.0, 1.0)
                })
                .collect();
            Image {
                height: image.height,
                width: image.width,
                data,
            }
        })
        .collect())
}
