//! Focal loss and the explicit confidence penalty — the two pointwise
//! objectives that raise prediction entropy, one implicitly and one directly.

use crate::field::{check_same_shape, log_softmax_into, LabelField, LogitField};
use crate::losses::{require, LossError, LossEval};

/// Focal loss on hard labels: mean of `-(1 - s_y)^gamma * log s_y`.
///
/// The gradient follows the chain rule through the modulating factor and is
/// finite everywhere; as `s_y -> 1` it tends to 0, which is the value used at
/// saturation.
pub fn focal_loss(
    logits: &LogitField,
    labels: &LabelField,
    gamma: f64,
) -> Result<LossEval, LossError> {
    require(
        gamma.is_finite() && gamma >= 0.0,
        "gamma",
        gamma,
        "must be finite and >= 0",
    )?;
    check_same_shape(
        (logits.height(), logits.width(), logits.num_classes()),
        (labels.height(), labels.width(), labels.num_classes()),
    )?;
    let k = logits.num_classes();
    let n = logits.num_pixels();
    let inv_n = 1.0 / n as f64;
    let mut eval = LossEval::zeros(logits.data().len());
    let mut log_probs = vec![0.0; k];
    let mut value_sum = 0.0;
    for pixel in 0..n {
        log_softmax_into(logits.pixel(pixel), &mut log_probs);
        let y = labels.class(pixel);
        let log_t = log_probs[y];
        let t = log_t.exp();
        let u = 1.0 - t;
        let focus = if u <= 0.0 {
            if gamma == 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            u.powf(gamma)
        };
        value_sum -= focus * log_t;
        // d/dl_k of -(1-t)^g log t is (g t (1-t)^(g-1) log t - (1-t)^g) (d_ky - s_k).
        let chain = if gamma == 0.0 || u <= 0.0 {
            0.0
        } else {
            gamma * t * u.powf(gamma - 1.0) * log_t
        };
        let scale = chain - focus;
        let grad = &mut eval.grad[pixel * k..(pixel + 1) * k];
        for (idx, g) in grad.iter_mut().enumerate() {
            let s = log_probs[idx].exp();
            let indicator = if idx == y { 1.0 } else { 0.0 };
            *g = scale * (indicator - s) * inv_n;
        }
    }
    eval.value = value_sum * inv_n;
    Ok(eval)
}

/// Cross-entropy minus a weighted Shannon entropy of the prediction:
/// `CE - lambda * mean H(s)`.
pub fn ecp_loss(
    logits: &LogitField,
    labels: &LabelField,
    lambda: f64,
) -> Result<LossEval, LossError> {
    require(
        lambda.is_finite() && lambda >= 0.0,
        "lambda",
        lambda,
        "must be finite and >= 0",
    )?;
    check_same_shape(
        (logits.height(), logits.width(), logits.num_classes()),
        (labels.height(), labels.width(), labels.num_classes()),
    )?;
    let k = logits.num_classes();
    let n = logits.num_pixels();
    let inv_n = 1.0 / n as f64;
    let mut eval = LossEval::zeros(logits.data().len());
    let mut log_probs = vec![0.0; k];
    let mut probs = vec![0.0; k];
    let mut value_sum = 0.0;
    for pixel in 0..n {
        log_softmax_into(logits.pixel(pixel), &mut log_probs);
        let mut entropy = 0.0;
        for idx in 0..k {
            probs[idx] = log_probs[idx].exp();
            entropy -= probs[idx] * log_probs[idx];
        }
        let y = labels.class(pixel);
        value_sum += -log_probs[y] - lambda * entropy;
        let grad = &mut eval.grad[pixel * k..(pixel + 1) * k];
        for (idx, g) in grad.iter_mut().enumerate() {
            let indicator = if idx == y { 1.0 } else { 0.0 };
            // d(-H)/dl_k = s_k (log s_k + H).
            *g = ((probs[idx] - indicator) + lambda * probs[idx] * (log_probs[idx] + entropy))
                * inv_n;
        }
    }
    eval.value = value_sum * inv_n;
    Ok(eval)
}
