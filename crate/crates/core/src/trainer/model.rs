//! A per-pixel classifier: raw intensity patch -> one hidden tanh layer ->
//! class logits. Small enough for exact whole-model gradient checks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::field::LogitField;
use crate::trainer::synthetic::Image;

/// Architecture of the pixel classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArch {
    /// Patch radius r; the input is the (2r+1)^2 intensity window.
    pub patch_radius: usize,
    /// Hidden layer width.
    pub hidden: usize,
    pub num_classes: usize,
}

impl ModelArch {
    pub fn num_features(&self) -> usize {
        let side = 2 * self.patch_radius + 1;
        side * side
    }

    pub fn param_count(&self) -> usize {
        let f = self.num_features();
        f * self.hidden + self.hidden + self.hidden * self.num_classes + self.num_classes
    }
}

/// The classifier with its parameters as one flat vector:
/// `[w1 (F x H), b1 (H), w2 (H x K), b2 (K)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelModel {
    arch: ModelArch,
    params: Vec<f64>,
}

impl PixelModel {
    /// Fan-in scaled symmetric uniform init for weights, zero biases.
    pub fn init(arch: ModelArch, rng: &mut ChaCha8Rng) -> Self {
        let f = arch.num_features();
        let (h, k) = (arch.hidden, arch.num_classes);
        let mut params = vec![0.0; arch.param_count()];
        let w1_scale = 1.0 / (f as f64).sqrt();
        for value in params.iter_mut().take(f * h) {
            *value = rng.random_range(-w1_scale..w1_scale);
        }
        let w2_offset = f * h + h;
        let w2_scale = 1.0 / (h as f64).sqrt();
        for value in params.iter_mut().skip(w2_offset).take(h * k) {
            *value = rng.random_range(-w2_scale..w2_scale);
        }
        Self { arch, params }
    }

    pub fn from_params(arch: ModelArch, params: Vec<f64>) -> Option<Self> {
        (params.len() == arch.param_count()).then_some(Self { arch, params })
    }

    pub fn arch(&self) -> ModelArch {
        self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let f = self.arch.num_features();
        let h = self.arch.hidden;
        let k = self.arch.num_classes;
        let b1 = f * h;
        let w2 = b1 + h;
        let b2 = w2 + h * k;
        (b1, w2, b2)
    }

    /// Intensity window centered on (y, x); out-of-image taps read 0.
    fn fill_features(&self, image: &Image, y: usize, x: usize, features: &mut [f64]) {
        let r = self.arch.patch_radius as isize;
        let mut index = 0;
        for dy in -r..=r {
            for dx in -r..=r {
                let ny = y as isize + dy;
                let nx = x as isize + dx;
                features[index] = if ny >= 0
                    && nx >= 0
                    && (ny as usize) < image.height()
                    && (nx as usize) < image.width()
                {
                    image.get(ny as usize, nx as usize)
                } else {
                    0.0
                };
                index += 1;
            }
        }
    }

    /// Forward pass over every pixel; optionally captures the hidden
    /// activations for a following backward pass.
    fn forward(&self, image: &Image, mut hidden_out: Option<&mut Vec<f64>>) -> LogitField {
        let f = self.arch.num_features();
        let (h, k) = (self.arch.hidden, self.arch.num_classes);
        let (b1_off, w2_off, b2_off) = self.offsets();
        let mut features = vec![0.0; f];
        let mut hidden = vec![0.0; h];
        let mut logits = Vec::with_capacity(image.height() * image.width() * k);
        if let Some(buffer) = hidden_out.as_deref_mut() {
            buffer.clear();
            buffer.reserve(image.height() * image.width() * h);
        }
        for y in 0..image.height() {
            for x in 0..image.width() {
                self.fill_features(image, y, x, &mut features);
                for j in 0..h {
                    let mut z = self.params[b1_off + j];
                    for (feature_index, &value) in features.iter().enumerate() {
                        z += value * self.params[feature_index * h + j];
                    }
                    hidden[j] = z.tanh();
                }
                if let Some(buffer) = hidden_out.as_deref_mut() {
                    buffer.extend_from_slice(&hidden);
                }
                for class in 0..k {
                    let mut logit = self.params[b2_off + class];
                    for (j, &activation) in hidden.iter().enumerate() {
                        logit += activation * self.params[w2_off + j * k + class];
                    }
                    logits.push(logit);
                }
            }
        }
        LogitField::new(image.height(), image.width(), k, logits)
            .expect("forward pass produces finite logits of the right shape")
    }

    /// Class logits for every pixel of the image.
    pub fn predict_logits(&self, image: &Image) -> LogitField {
        self.forward(image, None)
    }

    /// Forward pass that keeps hidden activations for [`backward`].
    ///
    /// [`backward`]: PixelModel::backward
    pub fn forward_cached(&self, image: &Image) -> (LogitField, Vec<f64>) {
        let mut hidden = Vec::new();
        let logits = self.forward(image, Some(&mut hidden));
        (logits, hidden)
    }

    /// Accumulate parameter gradients for one image given dL/dlogits,
    /// scaled by `weight`.
    pub fn backward(
        &self,
        image: &Image,
        hidden: &[f64],
        grad_logits: &[f64],
        weight: f64,
        grad_params: &mut [f64],
    ) {
        let f = self.arch.num_features();
        let (h, k) = (self.arch.hidden, self.arch.num_classes);
        let (b1_off, w2_off, b2_off) = self.offsets();
        let mut features = vec![0.0; f];
        let mut grad_hidden = vec![0.0; h];
        for y in 0..image.height() {
            for x in 0..image.width() {
                let pixel = y * image.width() + x;
                let g = &grad_logits[pixel * k..(pixel + 1) * k];
                let activations = &hidden[pixel * h..(pixel + 1) * h];
                self.fill_features(image, y, x, &mut features);
                for (class, &g_class) in g.iter().enumerate() {
                    grad_params[b2_off + class] += weight * g_class;
                }
                for (j, &activation) in activations.iter().enumerate() {
                    let mut upstream = 0.0;
                    for (class, &g_class) in g.iter().enumerate() {
                        grad_params[w2_off + j * k + class] += weight * activation * g_class;
                        upstream += self.params[w2_off + j * k + class] * g_class;
                    }
                    grad_hidden[j] = upstream * (1.0 - activation * activation);
                }
                for (j, &gz) in grad_hidden.iter().enumerate() {
                    grad_params[b1_off + j] += weight * gz;
                    for (feature_index, &value) in features.iter().enumerate() {
                        grad_params[feature_index * h + j] += weight * value * gz;
                    }
                }
            }
        }
    }
}
