//! Scalar temperature scaling: one positive factor fitted on validation
//! logits by minimizing negative log-likelihood, then applied to test logits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{log_softmax_into, softmax, FieldError, LabelField, LogitField, ProbField};
use crate::metrics::{evaluation_mask, MaskRule, MetricError};

#[derive(Debug, Error)]
pub enum FitError {
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("empty validation set")]
    EmptyValidation,
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Result of fitting a scalar temperature on a validation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: f64,
    pub nll_before: f64,
    pub nll_after: f64,
    /// Objective evaluations spent by the search.
    pub iterations: usize,
}

/// Search bracket for the temperature, on a log scale.
const T_MIN: f64 = 0.05;
const T_MAX: f64 = 20.0;
/// Absolute tolerance on log T at which the search stops.
const LOG_T_TOL: f64 = 1e-4;

pub(crate) fn scale_logits(logits: &LogitField, temperature: f64) -> Result<LogitField, FitError> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(FitError::InvalidTemperature(temperature));
    }
    Ok(logits.scaled(1.0 / temperature))
}

/// Softmax of `l / T`. The argmax class of every pixel is unchanged for any
/// positive temperature.
pub fn apply_temperature(logits: &LogitField, temperature: f64) -> Result<ProbField, FitError> {
    Ok(softmax(&scale_logits(logits, temperature)?))
}

/// Masked validation pixels flattened to (logit vector, class) pairs.
fn collect_pixels(
    cases: &[(&LogitField, &LabelField)],
    mask_rule: MaskRule,
    background: usize,
) -> Result<(Vec<f64>, Vec<usize>, usize), FitError> {
    let mut flat_logits = Vec::new();
    let mut classes = Vec::new();
    let mut num_classes = 0;
    for &(logits, labels) in cases {
        num_classes = logits.num_classes();
        let probs = softmax(logits);
        let pred = probs.argmax_labels(background)?;
        let gt = LabelField::new(
            labels.height(),
            labels.width(),
            labels.num_classes(),
            background,
            labels.data().to_vec(),
        )?;
        let mask = evaluation_mask(mask_rule, &pred, &gt, background)?;
        for pixel in 0..gt.num_pixels() {
            if mask.get(pixel) {
                flat_logits.extend_from_slice(logits.pixel(pixel));
                classes.push(gt.class(pixel));
            }
        }
    }
    if classes.is_empty() {
        return Err(FitError::EmptyValidation);
    }
    Ok((flat_logits, classes, num_classes))
}

/// Mean NLL of `softmax(l / T)` over the collected pixels.
fn nll_at(flat_logits: &[f64], classes: &[usize], num_classes: usize, temperature: f64) -> f64 {
    let inv_t = 1.0 / temperature;
    let mut scaled = vec![0.0; num_classes];
    let mut log_probs = vec![0.0; num_classes];
    let mut sum = 0.0;
    for (pixel, &class) in classes.iter().enumerate() {
        let vec = &flat_logits[pixel * num_classes..(pixel + 1) * num_classes];
        for (s, &l) in scaled.iter_mut().zip(vec) {
            *s = l * inv_t;
        }
        log_softmax_into(&scaled, &mut log_probs);
        sum -= log_probs[class];
    }
    sum / classes.len() as f64
}

/// Fit the temperature that minimizes mean validation NLL.
///
/// Golden-section search on log T over `[0.05, 20]`, to absolute tolerance
/// 1e-4 on log T. Falls back to T = 1 if the search cannot improve on it, so
/// the fitted NLL never exceeds the unscaled one.
pub fn fit_temperature(
    cases: &[(&LogitField, &LabelField)],
    mask_rule: MaskRule,
    background: usize,
) -> Result<TemperatureFit, FitError> {
    let (flat_logits, classes, num_classes) = collect_pixels(cases, mask_rule, background)?;
    for &l in &flat_logits {
        if !l.is_finite() {
            return Err(FitError::Field(FieldError::NonFinite { index: 0, value: l }));
        }
    }
    let mut evaluations = 0usize;
    let mut objective = |log_t: f64| {
        evaluations += 1;
        nll_at(&flat_logits, &classes, num_classes, log_t.exp())
    };

    // Golden-section on x = log T.
    let inv_phi: f64 = (5f64.sqrt() - 1.0) / 2.0;
    let mut lo = T_MIN.ln();
    let mut hi = T_MAX.ln();
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = objective(x1);
    let mut f2 = objective(x2);
    while hi - lo > LOG_T_TOL {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = objective(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = objective(x2);
        }
    }
    let best_log_t = 0.5 * (lo + hi);

    let nll_before = nll_at(&flat_logits, &classes, num_classes, 1.0);
    let candidate = best_log_t.exp();
    let nll_candidate = nll_at(&flat_logits, &classes, num_classes, candidate);
    let (temperature, nll_after) = if nll_candidate <= nll_before {
        (candidate, nll_candidate)
    } else {
        (1.0, nll_before)
    };
    Ok(TemperatureFit {
        temperature,
        nll_before,
        nll_after,
        iterations: evaluations,
    })
}
