//! Soft Dice loss with an analytic gradient through the softmax.

use crate::field::{check_same_shape, log_softmax_into, LabelField, LogitField};
use crate::losses::{require, LossError, LossEval};

/// Soft Dice averaged over classes.
///
/// Per class `c` the term is `1 - (2 sum_p s_pc y_pc + eps) / (sum_p s_pc +
/// sum_p y_pc + eps)`; a class absent from both prediction mass and labels
/// contributes 0 thanks to the smoothing constant.
pub fn dice_loss(
    logits: &LogitField,
    labels: &LabelField,
    epsilon: f64,
) -> Result<LossEval, LossError> {
    require(
        epsilon.is_finite() && epsilon > 0.0,
        "epsilon",
        epsilon,
        "must be finite and > 0",
    )?;
    check_same_shape(
        (logits.height(), logits.width(), logits.num_classes()),
        (labels.height(), labels.width(), labels.num_classes()),
    )?;
    let k = logits.num_classes();
    let n = logits.num_pixels();
    // Softmax for every pixel, kept for the backward pass.
    let mut probs = vec![0.0; logits.data().len()];
    let mut log_probs = vec![0.0; k];
    for pixel in 0..n {
        log_softmax_into(logits.pixel(pixel), &mut log_probs);
        for idx in 0..k {
            probs[pixel * k + idx] = log_probs[idx].exp();
        }
    }

    let mut intersection = vec![0.0; k];
    let mut prob_sum = vec![0.0; k];
    let mut label_sum = vec![0.0; k];
    for pixel in 0..n {
        let y = labels.class(pixel);
        label_sum[y] += 1.0;
        for idx in 0..k {
            let s = probs[pixel * k + idx];
            prob_sum[idx] += s;
            if idx == y {
                intersection[idx] += s;
            }
        }
    }

    let inv_k = 1.0 / k as f64;
    let mut value = 0.0;
    let mut numer = vec![0.0; k];
    let mut denom = vec![0.0; k];
    for c in 0..k {
        numer[c] = 2.0 * intersection[c] + epsilon;
        denom[c] = prob_sum[c] + label_sum[c] + epsilon;
        value += inv_k * (1.0 - numer[c] / denom[c]);
    }

    // dL/ds_pc = (numer_c - 2 y_pc denom_c) / (K denom_c^2); chain through
    // softmax with the usual s_k (g_k - sum_c g_c s_c) pattern.
    let mut eval = LossEval::zeros(logits.data().len());
    let mut upstream = vec![0.0; k];
    for pixel in 0..n {
        let y = labels.class(pixel);
        let mut weighted = 0.0;
        for c in 0..k {
            let y_pc = if c == y { 1.0 } else { 0.0 };
            upstream[c] = inv_k * (numer[c] - 2.0 * y_pc * denom[c]) / (denom[c] * denom[c]);
            weighted += upstream[c] * probs[pixel * k + c];
        }
        let grad = &mut eval.grad[pixel * k..(pixel + 1) * k];
        for (idx, g) in grad.iter_mut().enumerate() {
            let s = probs[pixel * k + idx];
            *g = s * (upstream[idx] - weighted);
        }
    }
    eval.value = value;
    Ok(eval)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_overlap_vanishes() {
        // Saturated logits make the prediction numerically one-hot.
        let labels = LabelField::new(2, 2, 3, 0, vec![0, 1, 2, 0]).unwrap();
        let mut logit_data = vec![0.0; 12];
        for (pixel, &y) in labels.data().iter().enumerate() {
            logit_data[pixel * 3 + y as usize] = 60.0;
        }
        let logits = LogitField::new(2, 2, 3, logit_data).unwrap();
        let eval = dice_loss(&logits, &labels, 1e-5).unwrap();
        assert!(eval.value.abs() < 1e-4, "value {}", eval.value);
    }

    #[test]
    fn absent_class_contributes_nothing() {
        // Class 2 appears nowhere: its prediction mass is ~0 and its label
        // count is 0, so the epsilon-smoothed ratio is 1 and the term is 0.
        let labels = LabelField::new(1, 2, 3, 0, vec![0, 1]).unwrap();
        let logits =
            LogitField::new(1, 2, 3, vec![60.0, 0.0, -60.0, 0.0, 60.0, -60.0]).unwrap();
        let eval = dice_loss(&logits, &labels, 1e-5).unwrap();
        assert!(eval.value.abs() < 1e-4, "value {}", eval.value);
    }

    #[test]
    fn two_pixel_value_matches_hand_expansion() {
        let logits = LogitField::new(2, 1, 2, vec![0.8, -0.4, -1.0, 0.5]).unwrap();
        let labels = LabelField::new(2, 1, 2, 0, vec![0, 1]).unwrap();
        let epsilon = 1e-5;
        let eval = dice_loss(&logits, &labels, epsilon).unwrap();

        // Scalar expansion with independent softmax arithmetic.
        let s0 = {
            let (a, b) = (0.8f64.exp(), (-0.4f64).exp());
            a / (a + b)
        };
        let s1 = {
            let (a, b) = ((-1.0f64).exp(), 0.5f64.exp());
            a / (a + b)
        };
        // Class 0: prediction mass s0 + s1, one labeled pixel intersecting s0.
        let d0 = 1.0 - (2.0 * s0 + epsilon) / ((s0 + s1) + 1.0 + epsilon);
        // Class 1: mass (1-s0) + (1-s1), one labeled pixel intersecting 1-s1.
        let d1 = 1.0 - (2.0 * (1.0 - s1) + epsilon) / ((2.0 - s0 - s1) + 1.0 + epsilon);
        let expected = (d0 + d1) / 2.0;
        assert!((eval.value - expected).abs() < 1e-12);
    }

    #[test]
    fn non_positive_epsilon_is_rejected() {
        let logits = LogitField::new(1, 1, 2, vec![0.0, 0.0]).unwrap();
        let labels = LabelField::new(1, 1, 2, 0, vec![0]).unwrap();
        assert!(dice_loss(&logits, &labels, 0.0).is_err());
        assert!(dice_loss(&logits, &labels, -1.0).is_err());
    }
}
