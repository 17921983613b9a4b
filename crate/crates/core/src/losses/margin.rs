//! The margin hinge on logit distances, and the full margin-constrained
//! cross-entropy objective.

use crate::field::{argmax, check_same_shape, LabelField, LogitField};
use crate::losses::{ce_loss, require, LossError, LossEval, PenaltyKind, Target};

/// Mean hinge penalty on logit distances exceeding the margin.
///
/// L1 sums `max(0, max_j l_j - l_k - m)` over classes, L2 squares each hinge.
/// The subgradient puts `-1` on every violating logit and `+1` on the winning
/// logit per violation (scaled by `2 * violation` for L2); distances at or
/// below the margin get exactly zero gradient, including at the kink. A tied
/// maximum routes its gradient to the lowest class index.
pub fn margin_penalty(
    logits: &LogitField,
    margin: f64,
    kind: PenaltyKind,
) -> Result<LossEval, LossError> {
    require(
        margin.is_finite() && margin >= 0.0,
        "margin",
        margin,
        "must be finite and >= 0",
    )?;
    let k = logits.num_classes();
    let n = logits.num_pixels();
    let inv_n = 1.0 / n as f64;
    let mut eval = LossEval::zeros(logits.data().len());
    let mut value_sum = 0.0;
    for pixel in 0..n {
        let vec = logits.pixel(pixel);
        let winner = argmax(vec);
        let top = vec[winner];
        let grad = &mut eval.grad[pixel * k..(pixel + 1) * k];
        for idx in 0..k {
            let violation = top - vec[idx] - margin;
            if violation <= 0.0 {
                continue;
            }
            match kind {
                PenaltyKind::L1 => {
                    value_sum += violation;
                    grad[idx] -= inv_n;
                    grad[winner] += inv_n;
                }
                PenaltyKind::L2 => {
                    value_sum += violation * violation;
                    grad[idx] -= 2.0 * violation * inv_n;
                    grad[winner] += 2.0 * violation * inv_n;
                }
            }
        }
    }
    eval.value = value_sum * inv_n;
    Ok(eval)
}

/// Cross-entropy plus the weighted margin hinge; values and gradients add.
pub fn margin_loss(
    logits: &LogitField,
    labels: &LabelField,
    margin: f64,
    lambda: f64,
    kind: PenaltyKind,
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
    let ce = ce_loss(logits, Target::Hard(labels))?;
    let penalty = margin_penalty(logits, margin, kind)?;
    Ok(ce.add_scaled(lambda, &penalty))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::logit_distances;

    fn single(logits: &[f64]) -> LogitField {
        LogitField::new(1, 1, logits.len(), logits.to_vec()).unwrap()
    }

    #[test]
    fn inactive_constraint_gives_zero_value_and_gradient() {
        let eval = margin_penalty(&single(&[2.0, 1.0, 0.0]), 5.0, PenaltyKind::L1).unwrap();
        assert_eq!(eval.value, 0.0);
        assert!(eval.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn l1_value_by_direct_evaluation() {
        // d = [0, 2, 3]; with m = 1 the hinges are [0, 1, 2].
        let eval = margin_penalty(&single(&[3.0, 1.0, 0.0]), 1.0, PenaltyKind::L1).unwrap();
        assert!((eval.value - 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_margin_reproduces_linear_penalty() {
        // With m = 0 the L1 hinge sums all distances: 2 + 3 = 5, and the
        // gradient is the constant pattern +2 on the winner, -1 elsewhere.
        let eval = margin_penalty(&single(&[3.0, 1.0, 0.0]), 0.0, PenaltyKind::L1).unwrap();
        assert!((eval.value - 5.0).abs() < 1e-15);
        assert_eq!(eval.grad, vec![2.0, -1.0, -1.0]);
    }

    #[test]
    fn l2_squares_each_violation() {
        // d = [0, 2, 3], m = 1: violations 1 and 2 give 1 + 4 = 5.
        let eval = margin_penalty(&single(&[3.0, 1.0, 0.0]), 1.0, PenaltyKind::L2).unwrap();
        assert!((eval.value - 5.0).abs() < 1e-15);
        // Gradient: -2*1 on class 1, -2*2 on class 2, +2*(1+2) on the winner.
        assert_eq!(eval.grad, vec![6.0, -2.0, -4.0]);
    }

    #[test]
    fn negative_margin_is_rejected() {
        assert!(margin_penalty(&single(&[1.0, 0.0]), -0.5, PenaltyKind::L1).is_err());
    }

    #[test]
    fn penalty_is_zero_iff_max_distance_within_margin() {
        let cases = [
            (vec![4.0, 1.0, 0.0], 5.0),
            (vec![4.0, 1.0, 0.0], 4.0),
            (vec![4.0, 1.0, 0.0], 3.9),
            (vec![0.0, 0.0, 0.0], 0.0),
        ];
        for (logit_vec, margin) in cases {
            let field = single(&logit_vec);
            let eval = margin_penalty(&field, margin, PenaltyKind::L1).unwrap();
            let max_distance = logit_distances(&field).max_distance(0);
            assert_eq!(
                eval.value == 0.0,
                max_distance <= margin,
                "m={margin} logits={logit_vec:?}"
            );
        }
    }

    #[test]
    fn gradient_touches_only_violating_coordinates() {
        // d = [0, 2, 6, 9] with m = 5: only classes 2 and 3 violate.
        let eval = margin_penalty(&single(&[9.0, 7.0, 3.0, 0.0]), 5.0, PenaltyKind::L1).unwrap();
        assert_eq!(eval.grad[1], 0.0);
        assert!(eval.grad[2] < 0.0 && eval.grad[3] < 0.0);
        assert!((eval.grad[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn tied_maximum_routes_gradient_to_lowest_index() {
        let eval = margin_penalty(&single(&[4.0, 4.0, 0.0]), 1.0, PenaltyKind::L1).unwrap();
        // Winner is class 0 by the tie-break; class 1 has distance 0.
        assert!((eval.grad[0] - 1.0).abs() < 1e-15);
        assert_eq!(eval.grad[1], 0.0);
        assert!((eval.grad[2] - (-1.0)).abs() < 1e-15);
    }

    #[test]
    fn wide_margin_makes_full_loss_equal_ce() {
        let logits = LogitField::new(1, 2, 3, vec![1.0, 0.0, -1.0, 2.0, 1.5, 0.0]).unwrap();
        let labels = LabelField::new(1, 2, 3, 0, vec![0, 0]).unwrap();
        let with_margin =
            margin_loss(&logits, &labels, 50.0, 0.1, PenaltyKind::L1).unwrap();
        let ce = ce_loss(&logits, Target::Hard(&labels)).unwrap();
        assert_eq!(with_margin.value, ce.value);
        assert_eq!(with_margin.grad, ce.grad);
    }
}
