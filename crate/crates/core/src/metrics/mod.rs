//! Calibration and segmentation metrics, and the ranking schemes that
//! aggregate them across methods.
//!
//! All reductions run in a fixed sequential pixel order, so repeated
//! evaluations are bit-identical.

mod overlap;
mod ranking;
mod report;

pub use overlap::{asd, dsc, OverlapScores, SurfaceScores};
pub use ranking::{
    mean_case_rank, rank_scores, sum_rank, MeanCaseRankResult, Orientation, RankError, RankMatrix,
    SumRankResult,
};
pub use report::{
    evaluate_case, per_case_csv, reliability_csv, summarize, summary_csv, MetricReport,
    MetricSummary,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{BoolField, FieldError, LabelField, ProbField};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("no foreground samples under the evaluation mask")]
    EmptyMask,
    #[error("need at least 1 bin, got {0}")]
    NoBins(usize),
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Which pixels enter calibration metrics and the temperature fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskRule {
    /// Keep a pixel when the ground truth or the prediction is foreground.
    ForegroundUnion,
    /// Keep every pixel.
    AllPixels,
}

/// Settings shared by every metric evaluation in a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSettings {
    #[serde(default = "default_bins")]
    pub num_bins: usize,
    #[serde(default)]
    pub background_class: usize,
    #[serde(default = "default_mask_rule")]
    pub mask_rule: MaskRule,
}

fn default_bins() -> usize {
    15
}

fn default_mask_rule() -> MaskRule {
    MaskRule::ForegroundUnion
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self {
            num_bins: default_bins(),
            background_class: 0,
            mask_rule: default_mask_rule(),
        }
    }
}

/// Per-bin counts, accuracies, and confidences behind ECE-style metrics and
/// reliability plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityTable {
    pub num_bins: usize,
    /// `num_bins + 1` equispaced edges over `[0, 1]`.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Per-bin accuracy; 0 for empty bins.
    pub accuracies: Vec<f64>,
    /// Per-bin mean confidence; 0 for empty bins.
    pub confidences: Vec<f64>,
    pub total: usize,
}

impl ReliabilityTable {
    pub(crate) fn new(num_bins: usize) -> Self {
        let bin_edges = (0..=num_bins).map(|i| i as f64 / num_bins as f64).collect();
        Self {
            num_bins,
            bin_edges,
            counts: vec![0; num_bins],
            accuracies: vec![0.0; num_bins],
            confidences: vec![0.0; num_bins],
            total: 0,
        }
    }

    /// Bin index for a probability: equispaced bins over `[0, 1]`,
    /// right-inclusive at 1.
    fn bin_index(&self, probability: f64) -> usize {
        ((probability * self.num_bins as f64) as usize).min(self.num_bins - 1)
    }

    /// Weighted average of |accuracy - confidence| over non-empty bins.
    pub fn expected_error(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let n = self.total as f64;
        let mut error = 0.0;
        for bin in 0..self.num_bins {
            if self.counts[bin] > 0 {
                error += (self.counts[bin] as f64 / n)
                    * (self.accuracies[bin] - self.confidences[bin]).abs();
            }
        }
        error
    }
}

/// Accumulates (probability, hit) pairs into bins, then finalizes means.
struct BinAccumulator {
    table: ReliabilityTable,
    hit_sums: Vec<f64>,
    prob_sums: Vec<f64>,
}

impl BinAccumulator {
    fn new(num_bins: usize) -> Self {
        Self {
            table: ReliabilityTable::new(num_bins),
            hit_sums: vec![0.0; num_bins],
            prob_sums: vec![0.0; num_bins],
        }
    }

    fn push(&mut self, probability: f64, hit: bool) {
        let bin = self.table.bin_index(probability);
        self.table.counts[bin] += 1;
        self.table.total += 1;
        if hit {
            self.hit_sums[bin] += 1.0;
        }
        self.prob_sums[bin] += probability;
    }

    fn finish(mut self) -> ReliabilityTable {
        for bin in 0..self.table.num_bins {
            if self.table.counts[bin] > 0 {
                let count = self.table.counts[bin] as f64;
                self.table.accuracies[bin] = self.hit_sums[bin] / count;
                self.table.confidences[bin] = self.prob_sums[bin] / count;
            }
        }
        self.table
    }
}

/// Pixels kept for evaluation: ground truth or prediction is non-background.
///
/// Only doubly-background pixels drop out, so confidently wrong foreground
/// predictions still count.
pub fn foreground_mask(
    pred: &LabelField,
    gt: &LabelField,
    background: usize,
) -> Result<BoolField, MetricError> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(MetricError::Field(FieldError::ShapeMismatch {
            left: format!("{}x{}", pred.height(), pred.width()),
            right: format!("{}x{}", gt.height(), gt.width()),
        }));
    }
    let data = (0..gt.num_pixels())
        .map(|pixel| gt.class(pixel) != background || pred.class(pixel) != background)
        .collect();
    Ok(BoolField::new(gt.height(), gt.width(), data)?)
}

/// Build the evaluation mask dictated by the rule.
pub fn evaluation_mask(
    rule: MaskRule,
    pred: &LabelField,
    gt: &LabelField,
    background: usize,
) -> Result<BoolField, MetricError> {
    match rule {
        MaskRule::ForegroundUnion => foreground_mask(pred, gt, background),
        MaskRule::AllPixels => Ok(BoolField::full(gt.height(), gt.width())),
    }
}

/// Expected calibration error over masked pixels, with its reliability table.
///
/// Confidence is the maximum class probability; correctness compares the
/// argmax class with the ground truth.
pub fn ece(
    probs: &ProbField,
    gt: &LabelField,
    mask: &BoolField,
    num_bins: usize,
) -> Result<(f64, ReliabilityTable), MetricError> {
    if num_bins == 0 {
        return Err(MetricError::NoBins(num_bins));
    }
    check_metric_shapes(probs, gt, mask)?;
    let mut bins = BinAccumulator::new(num_bins);
    for pixel in 0..gt.num_pixels() {
        if !mask.get(pixel) {
            continue;
        }
        let predicted = probs.predicted_class(pixel);
        let confidence = probs.pixel(pixel)[predicted];
        bins.push(confidence, predicted == gt.class(pixel));
    }
    if bins.table.total == 0 {
        return Err(MetricError::EmptyMask);
    }
    let table = bins.finish();
    Ok((table.expected_error(), table))
}

/// Classwise expected calibration error with one reliability table per class.
///
/// For class `j`, the bin of a pixel is chosen by its class-`j` probability;
/// bin accuracy is the fraction of members whose ground truth is `j`, bin
/// confidence the mean class-`j` probability. Weights divide by the masked
/// pixel count, as in the plain ECE.
pub fn cece(
    probs: &ProbField,
    gt: &LabelField,
    mask: &BoolField,
    num_bins: usize,
) -> Result<(f64, Vec<ReliabilityTable>), MetricError> {
    if num_bins == 0 {
        return Err(MetricError::NoBins(num_bins));
    }
    check_metric_shapes(probs, gt, mask)?;
    let k = probs.num_classes();
    let mut per_class: Vec<BinAccumulator> =
        (0..k).map(|_| BinAccumulator::new(num_bins)).collect();
    let mut total = 0usize;
    for pixel in 0..gt.num_pixels() {
        if !mask.get(pixel) {
            continue;
        }
        total += 1;
        let vec = probs.pixel(pixel);
        let truth = gt.class(pixel);
        for (class, bins) in per_class.iter_mut().enumerate() {
            bins.push(vec[class], truth == class);
        }
    }
    if total == 0 {
        return Err(MetricError::EmptyMask);
    }
    let tables: Vec<ReliabilityTable> = per_class.into_iter().map(BinAccumulator::finish).collect();
    let value = tables.iter().map(ReliabilityTable::expected_error).sum();
    Ok((value, tables))
}

/// Mean negative log-likelihood of the true class over masked pixels.
///
/// Computed from log-probabilities to stay finite at saturation.
pub fn masked_nll(
    log_probs: &[f64],
    gt: &LabelField,
    mask: &BoolField,
) -> Result<f64, MetricError> {
    let k = gt.num_classes();
    let mut sum = 0.0;
    let mut count = 0usize;
    for pixel in 0..gt.num_pixels() {
        if !mask.get(pixel) {
            continue;
        }
        sum -= log_probs[pixel * k + gt.class(pixel)];
        count += 1;
    }
    if count == 0 {
        return Err(MetricError::EmptyMask);
    }
    Ok(sum / count as f64)
}

fn check_metric_shapes(
    probs: &ProbField,
    gt: &LabelField,
    mask: &BoolField,
) -> Result<(), MetricError> {
    if (probs.height(), probs.width(), probs.num_classes())
        != (gt.height(), gt.width(), gt.num_classes())
        || (mask.height(), mask.width()) != (gt.height(), gt.width())
    {
        return Err(MetricError::Field(FieldError::ShapeMismatch {
            left: format!(
                "{}x{}x{}",
                probs.height(),
                probs.width(),
                probs.num_classes()
            ),
            right: format!("{}x{}x{}", gt.height(), gt.width(), gt.num_classes()),
        }));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{softmax, LogitField};

    fn labels(height: usize, width: usize, k: usize, data: Vec<u32>) -> LabelField {
        LabelField::new(height, width, k, 0, data).unwrap()
    }

    /// Probabilities with a chosen confidence on a chosen class, two classes.
    fn two_class_probs(cells: &[(f64, usize)]) -> ProbField {
        let mut logit_data = Vec::new();
        for &(confidence, class) in cells {
            // Solve for the logit gap that produces this confidence.
            let gap = (confidence / (1.0 - confidence)).ln();
            match class {
                0 => logit_data.extend_from_slice(&[gap, 0.0]),
                _ => logit_data.extend_from_slice(&[0.0, gap]),
            }
        }
        softmax(&LogitField::new(1, cells.len(), 2, logit_data).unwrap())
    }

    #[test]
    fn all_background_mask_is_empty() {
        let gt = labels(2, 2, 2, vec![0; 4]);
        let pred = labels(2, 2, 2, vec![0; 4]);
        let mask = foreground_mask(&pred, &gt, 0).unwrap();
        assert_eq!(mask.count(), 0);
    }

    #[test]
    fn false_negative_pixels_are_included() {
        let gt = labels(1, 2, 2, vec![1, 0]);
        let pred = labels(1, 2, 2, vec![0, 0]);
        let mask = foreground_mask(&pred, &gt, 0).unwrap();
        assert_eq!(mask.data(), &[true, false]);
    }

    #[test]
    fn checkerboard_mask_matches_per_pixel_rule() {
        let gt = labels(2, 2, 2, vec![0, 1, 1, 0]);
        let pred = labels(2, 2, 2, vec![1, 0, 1, 0]);
        let mask = foreground_mask(&pred, &gt, 0).unwrap();
        // Pixel by pixel: (gt!=0 or pred!=0).
        assert_eq!(mask.data(), &[true, true, true, false]);
    }

    #[test]
    fn saturated_correct_predictions_have_zero_ece() {
        let gt = labels(1, 4, 2, vec![1, 1, 1, 1]);
        let probs = two_class_probs(&[(0.9999999, 1); 4]);
        let mask = BoolField::full(1, 4);
        let (value, table) = ece(&probs, &gt, &mask, 15).unwrap();
        // Confidence and accuracy agree in the single occupied bin.
        assert!(value < 1e-6);
        assert_eq!(table.counts.iter().sum::<usize>(), 4);
    }

    #[test]
    fn ten_pixel_fixture_matches_brute_force_tally() {
        let cells = [
            (0.62, 0usize),
            (0.93, 1),
            (0.55, 0),
            (0.71, 1),
            (0.88, 0),
            (0.99, 1),
            (0.51, 0),
            (0.67, 1),
            (0.74, 0),
            (0.81, 1),
        ];
        let truth = vec![0u32, 1, 1, 0, 0, 1, 0, 1, 1, 1];
        let probs = two_class_probs(&cells);
        let gt = labels(1, 10, 2, truth.clone());
        let mask = BoolField::full(1, 10);
        let num_bins = 15;
        let (value, _) = ece(&probs, &gt, &mask, num_bins).unwrap();

        // Brute force: tally every pixel into every bin independently.
        let mut count = vec![0usize; num_bins];
        let mut hits = vec![0usize; num_bins];
        let mut conf = vec![0.0; num_bins];
        for pixel in 0..10 {
            let p = probs.pixel(pixel);
            let (predicted, confidence) = if p[0] >= p[1] { (0, p[0]) } else { (1, p[1]) };
            let mut bin = (confidence * num_bins as f64).floor() as usize;
            if bin == num_bins {
                bin -= 1;
            }
            count[bin] += 1;
            conf[bin] += confidence;
            if predicted as u32 == truth[pixel] {
                hits[bin] += 1;
            }
        }
        let mut expected = 0.0;
        for bin in 0..num_bins {
            if count[bin] > 0 {
                let acc = hits[bin] as f64 / count[bin] as f64;
                let avg = conf[bin] / count[bin] as f64;
                expected += count[bin] as f64 / 10.0 * (acc - avg).abs();
            }
        }
        assert!((value - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let gt = labels(1, 2, 2, vec![0, 0]);
        let probs = two_class_probs(&[(0.9, 0), (0.8, 0)]);
        let mask = BoolField::new(1, 2, vec![false, false]).unwrap();
        assert!(matches!(
            ece(&probs, &gt, &mask, 15),
            Err(MetricError::EmptyMask)
        ));
    }

    #[test]
    fn uniform_predictions_on_balanced_truth_have_zero_cece() {
        let logits = LogitField::new(1, 4, 2, vec![0.0; 8]).unwrap();
        let probs = softmax(&logits);
        let gt = labels(1, 4, 2, vec![0, 1, 0, 1]);
        let mask = BoolField::full(1, 4);
        let (value, _) = cece(&probs, &gt, &mask, 15).unwrap();
        assert!(value < 1e-12);
    }

    #[test]
    fn cece_matches_brute_force_two_class_tally() {
        let cells = [
            (0.62, 0usize),
            (0.93, 1),
            (0.55, 0),
            (0.71, 1),
            (0.88, 0),
            (0.99, 1),
            (0.51, 0),
            (0.67, 1),
            (0.74, 0),
            (0.81, 1),
        ];
        let truth = vec![0u32, 1, 1, 0, 0, 1, 0, 1, 1, 1];
        let probs = two_class_probs(&cells);
        let gt = labels(1, 10, 2, truth.clone());
        let mask = BoolField::full(1, 10);
        let num_bins = 15;
        let (value, tables) = cece(&probs, &gt, &mask, num_bins).unwrap();
        assert_eq!(tables.len(), 2);

        let mut expected = 0.0;
        for class in 0..2usize {
            let mut count = vec![0usize; num_bins];
            let mut hits = vec![0usize; num_bins];
            let mut conf = vec![0.0; num_bins];
            for pixel in 0..10 {
                let p = probs.pixel(pixel)[class];
                let mut bin = (p * num_bins as f64).floor() as usize;
                if bin == num_bins {
                    bin -= 1;
                }
                count[bin] += 1;
                conf[bin] += p;
                if truth[pixel] as usize == class {
                    hits[bin] += 1;
                }
            }
            for bin in 0..num_bins {
                if count[bin] > 0 {
                    let acc = hits[bin] as f64 / count[bin] as f64;
                    let avg = conf[bin] / count[bin] as f64;
                    expected += count[bin] as f64 / 10.0 * (acc - avg).abs();
                }
            }
        }
        assert!((value - expected).abs() < 1e-12);
    }

    #[test]
    fn default_settings_use_fifteen_bins() {
        let settings = MetricSettings::default();
        assert_eq!(settings.num_bins, 15);
        assert_eq!(settings.background_class, 0);
        assert_eq!(settings.mask_rule, MaskRule::ForegroundUnion);
    }

    #[test]
    fn single_bin_ece_is_accuracy_confidence_gap() {
        let probs = two_class_probs(&[(0.9, 0), (0.8, 0), (0.7, 1)]);
        let gt = labels(1, 3, 2, vec![0, 1, 1]);
        let mask = BoolField::full(1, 3);
        let (value, table) = ece(&probs, &gt, &mask, 1).unwrap();
        let accuracy: f64 = 2.0 / 3.0;
        let confidence: f64 = (0.9 + 0.8 + 0.7) / 3.0;
        assert!((value - (accuracy - confidence).abs()).abs() < 1e-12);
        assert_eq!(table.counts[0], 3);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn random_case() -> impl Strategy<Value = (Vec<f64>, Vec<u32>)> {
            (2usize..=12).prop_flat_map(|pixels| {
                (
                    prop::collection::vec(-4.0..4.0f64, pixels * 3),
                    prop::collection::vec(0u32..3, pixels),
                )
            })
        }

        proptest! {
            #[test]
            fn ece_is_permutation_invariant((logit_data, truth) in random_case()) {
                let pixels = truth.len();
                let probs = softmax(&LogitField::new(1, pixels, 3, logit_data.clone()).unwrap());
                let gt = labels(1, pixels, 3, truth.clone());
                let mask = BoolField::full(1, pixels);
                let (base, _) = ece(&probs, &gt, &mask, 10).unwrap();

                // Reverse the pixel order.
                let mut reversed_logits = Vec::new();
                for pixel in (0..pixels).rev() {
                    reversed_logits.extend_from_slice(&logit_data[pixel * 3..(pixel + 1) * 3]);
                }
                let reversed_truth: Vec<u32> = truth.iter().rev().copied().collect();
                let probs_r = softmax(&LogitField::new(1, pixels, 3, reversed_logits).unwrap());
                let gt_r = labels(1, pixels, 3, reversed_truth);
                let (flipped, _) = ece(&probs_r, &gt_r, &mask, 10).unwrap();
                prop_assert!((base - flipped).abs() < 1e-12);
            }

            #[test]
            fn ece_is_invariant_under_class_relabeling((logit_data, truth) in random_case()) {
                let pixels = truth.len();
                let probs = softmax(&LogitField::new(1, pixels, 3, logit_data.clone()).unwrap());
                let gt = labels(1, pixels, 3, truth.clone());
                let mask = BoolField::full(1, pixels);
                let (base, _) = ece(&probs, &gt, &mask, 10).unwrap();

                // Cyclic relabeling 0 -> 1 -> 2 -> 0 of classes and logits.
                let perm = [1u32, 2, 0];
                let mut permuted_logits = vec![0.0; logit_data.len()];
                for pixel in 0..pixels {
                    for class in 0..3 {
                        permuted_logits[pixel * 3 + perm[class] as usize] =
                            logit_data[pixel * 3 + class];
                    }
                }
                let permuted_truth: Vec<u32> =
                    truth.iter().map(|&c| perm[c as usize]).collect();
                let probs_p = softmax(&LogitField::new(1, pixels, 3, permuted_logits).unwrap());
                let gt_p = labels(1, pixels, 3, permuted_truth);
                let (relabeled, _) = ece(&probs_p, &gt_p, &mask, 10).unwrap();
                prop_assert!((base - relabeled).abs() < 1e-12);
            }

            #[test]
            fn ece_and_cece_stay_bounded((logit_data, truth) in random_case()) {
                let pixels = truth.len();
                let probs = softmax(&LogitField::new(1, pixels, 3, logit_data).unwrap());
                let gt = labels(1, pixels, 3, truth);
                let mask = BoolField::full(1, pixels);
                let (e, _) = ece(&probs, &gt, &mask, 7).unwrap();
                let (c, _) = cece(&probs, &gt, &mask, 7).unwrap();
                prop_assert!((0.0..=1.0).contains(&e));
                // The classwise sum carries unit weight per class, so its
                // tight upper bound is 2 (winner plus losers), not 1.
                prop_assert!((0.0..=2.0).contains(&c));
            }
        }
    }
}
