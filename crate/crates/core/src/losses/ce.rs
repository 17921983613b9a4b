//! Cross-entropy against hard or soft targets, and uniform label smoothing.

use crate::field::{
    check_same_shape, log_softmax_into, LabelField, LogitField, SoftLabelField,
};
use crate::losses::{require, LossError, LossEval};

/// Target labels for cross-entropy: hard class indices or soft distributions.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Hard(&'a LabelField),
    Soft(&'a SoftLabelField),
}

impl Target<'_> {
    fn shape(&self) -> (usize, usize, usize) {
        match self {
            Target::Hard(l) => (l.height(), l.width(), l.num_classes()),
            Target::Soft(l) => (l.height(), l.width(), l.num_classes()),
        }
    }
}

/// Mean cross-entropy over all pixels; gradient per pixel is `(s - y) / N`.
pub fn ce_loss(logits: &LogitField, target: Target) -> Result<LossEval, LossError> {
    check_same_shape(
        (logits.height(), logits.width(), logits.num_classes()),
        target.shape(),
    )?;
    let k = logits.num_classes();
    let n = logits.num_pixels();
    let inv_n = 1.0 / n as f64;
    let mut eval = LossEval::zeros(logits.data().len());
    let mut log_probs = vec![0.0; k];
    let mut value_sum = 0.0;
    for pixel in 0..n {
        log_softmax_into(logits.pixel(pixel), &mut log_probs);
        let grad = &mut eval.grad[pixel * k..(pixel + 1) * k];
        match target {
            Target::Hard(labels) => {
                let y = labels.class(pixel);
                value_sum -= log_probs[y];
                for (idx, g) in grad.iter_mut().enumerate() {
                    let s = log_probs[idx].exp();
                    let y_k = if idx == y { 1.0 } else { 0.0 };
                    *g = (s - y_k) * inv_n;
                }
            }
            Target::Soft(labels) => {
                let y = labels.pixel(pixel);
                for (idx, g) in grad.iter_mut().enumerate() {
                    value_sum -= y[idx] * log_probs[idx];
                    let s = log_probs[idx].exp();
                    *g = (s - y[idx]) * inv_n;
                }
            }
        }
    }
    eval.value = value_sum * inv_n;
    Ok(eval)
}

/// Blend one-hot labels toward the uniform distribution:
/// `y_k -> y_k * (1 - alpha) + alpha / K`.
pub fn ls_transform(labels: &LabelField, alpha: f64) -> Result<SoftLabelField, LossError> {
    require(
        alpha.is_finite() && (0.0..1.0).contains(&alpha),
        "alpha",
        alpha,
        "must lie in [0, 1)",
    )?;
    let k = labels.num_classes();
    let off = alpha / k as f64;
    let on = 1.0 - alpha + off;
    let mut data = vec![off; labels.num_pixels() * k];
    for pixel in 0..labels.num_pixels() {
        data[pixel * k + labels.class(pixel)] = on;
    }
    Ok(SoftLabelField::new(
        labels.height(),
        labels.width(),
        k,
        data,
    )?)
}

/// Cross-entropy against uniformly smoothed labels.
pub fn ls_loss(logits: &LogitField, labels: &LabelField, alpha: f64) -> Result<LossEval, LossError> {
    let smoothed = ls_transform(labels, alpha)?;
    ce_loss(logits, Target::Soft(&smoothed))
}
