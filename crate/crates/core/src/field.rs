//! Pixel-grid field types and the softmax / logit-distance primitives every
//! other module builds on.
//!
//! All per-class fields are stored pixel-major with the class axis innermost:
//! element `(y, x, k)` lives at `(y * width + x) * num_classes + k`. Values are
//! `f64` throughout; fields are immutable after construction and all
//! operations here are pure functions.

use thiserror::Error;

/// Errors raised when constructing or combining fields.
#[derive(Debug, Error)]
pub enum FieldError {
    #[error("field dimensions must be positive (got {height}x{width})")]
    EmptyField { height: usize, width: usize },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("data length {got} does not match {height}x{width}x{classes}")]
    DataLength {
        got: usize,
        height: usize,
        width: usize,
        classes: usize,
    },
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("label {label} at index {index} is out of range for {classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: u32,
        classes: usize,
    },
    #[error("background class {background} is out of range for {classes} classes")]
    BackgroundOutOfRange { background: usize, classes: usize },
    #[error("per-pixel vector at pixel {pixel} sums to {sum}, expected 1")]
    NotNormalized { pixel: usize, sum: f64 },
    #[error("negative entry {value} at index {index}")]
    NegativeEntry { index: usize, value: f64 },
    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: String, right: String },
}

fn check_dims(height: usize, width: usize, num_classes: usize) -> Result<(), FieldError> {
    if height == 0 || width == 0 {
        return Err(FieldError::EmptyField { height, width });
    }
    if num_classes < 2 {
        return Err(FieldError::TooFewClasses(num_classes));
    }
    Ok(())
}

fn check_finite(data: &[f64]) -> Result<(), FieldError> {
    for (index, &value) in data.iter().enumerate() {
        if !value.is_finite() {
            return Err(FieldError::NonFinite { index, value });
        }
    }
    Ok(())
}

/// Per-pixel raw network outputs: one `f64` per class on a 2D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitField {
    height: usize,
    width: usize,
    num_classes: usize,
    data: Vec<f64>,
}

impl LogitField {
    /// Build a logit field, validating shape and finiteness.
    pub fn new(
        height: usize,
        width: usize,
        num_classes: usize,
        data: Vec<f64>,
    ) -> Result<Self, FieldError> {
        check_dims(height, width, num_classes)?;
        if data.len() != height * width * num_classes {
            return Err(FieldError::DataLength {
                got: data.len(),
                height,
                width,
                classes: num_classes,
            });
        }
        check_finite(&data)?;
        Ok(Self {
            height,
            width,
            num_classes,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Logit vector of one pixel, by flat pixel index.
    pub fn pixel(&self, pixel: usize) -> &[f64] {
        let k = self.num_classes;
        &self.data[pixel * k..(pixel + 1) * k]
    }

    /// Divide every logit by a positive temperature.
    pub(crate) fn scaled(&self, inv_temperature: f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            num_classes: self.num_classes,
            data: self.data.iter().map(|l| l * inv_temperature).collect(),
        }
    }
}

/// Per-pixel integer class labels in `[0, K)` plus the background class index.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelField {
    height: usize,
    width: usize,
    num_classes: usize,
    background_class: usize,
    data: Vec<u32>,
}

impl LabelField {
    pub fn new(
        height: usize,
        width: usize,
        num_classes: usize,
        background_class: usize,
        data: Vec<u32>,
    ) -> Result<Self, FieldError> {
        check_dims(height, width, num_classes)?;
        if data.len() != height * width {
            return Err(FieldError::DataLength {
                got: data.len(),
                height,
                width,
                classes: 1,
            });
        }
        if background_class >= num_classes {
            return Err(FieldError::BackgroundOutOfRange {
                background: background_class,
                classes: num_classes,
            });
        }
        for (index, &label) in data.iter().enumerate() {
            if label as usize >= num_classes {
                return Err(FieldError::LabelOutOfRange {
                    index,
                    label,
                    classes: num_classes,
                });
            }
        }
        Ok(Self {
            height,
            width,
            num_classes,
            background_class,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn background_class(&self) -> usize {
        self.background_class
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    /// Class of one pixel, by flat pixel index.
    pub fn class(&self, pixel: usize) -> usize {
        self.data[pixel] as usize
    }

    /// Count of pixels carrying each class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.num_classes];
        for &label in &self.data {
            hist[label as usize] += 1;
        }
        hist
    }
}

/// Soft per-pixel class distributions, e.g. smoothed labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelField {
    height: usize,
    width: usize,
    num_classes: usize,
    data: Vec<f64>,
}

impl SoftLabelField {
    /// Build a soft label field; every per-pixel vector must be non-negative
    /// and sum to 1 within 1e-9.
    pub fn new(
        height: usize,
        width: usize,
        num_classes: usize,
        data: Vec<f64>,
    ) -> Result<Self, FieldError> {
        check_dims(height, width, num_classes)?;
        if data.len() != height * width * num_classes {
            return Err(FieldError::DataLength {
                got: data.len(),
                height,
                width,
                classes: num_classes,
            });
        }
        check_finite(&data)?;
        for pixel in 0..height * width {
            let vec = &data[pixel * num_classes..(pixel + 1) * num_classes];
            let mut sum = 0.0;
            for (k, &value) in vec.iter().enumerate() {
                if value < 0.0 {
                    return Err(FieldError::NegativeEntry {
                        index: pixel * num_classes + k,
                        value,
                    });
                }
                sum += value;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(FieldError::NotNormalized { pixel, sum });
            }
        }
        Ok(Self {
            height,
            width,
            num_classes,
            data,
        })
    }

    /// Expand hard labels into one-hot soft labels.
    pub fn from_labels(labels: &LabelField) -> Self {
        let k = labels.num_classes();
        let mut data = vec![0.0; labels.num_pixels() * k];
        for pixel in 0..labels.num_pixels() {
            data[pixel * k + labels.class(pixel)] = 1.0;
        }
        Self {
            height: labels.height(),
            width: labels.width(),
            num_classes: k,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, pixel: usize) -> &[f64] {
        let k = self.num_classes;
        &self.data[pixel * k..(pixel + 1) * k]
    }
}

/// Per-pixel softmax probabilities; same layout as [`LogitField`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbField {
    height: usize,
    width: usize,
    num_classes: usize,
    data: Vec<f64>,
}

impl ProbField {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, pixel: usize) -> &[f64] {
        let k = self.num_classes;
        &self.data[pixel * k..(pixel + 1) * k]
    }

    /// Confidence of one pixel: its maximum class probability.
    pub fn confidence(&self, pixel: usize) -> f64 {
        let vec = self.pixel(pixel);
        vec[argmax(vec)]
    }

    /// Argmax class of one pixel (lowest index wins ties).
    pub fn predicted_class(&self, pixel: usize) -> usize {
        argmax(self.pixel(pixel))
    }

    /// Argmax prediction map as a label field.
    pub fn argmax_labels(&self, background_class: usize) -> Result<LabelField, FieldError> {
        let mut data = Vec::with_capacity(self.num_pixels());
        for pixel in 0..self.num_pixels() {
            data.push(self.predicted_class(pixel) as u32);
        }
        LabelField::new(
            self.height,
            self.width,
            self.num_classes,
            background_class,
            data,
        )
    }
}

/// Per-pixel gaps between the maximum logit and every class logit.
///
/// Every entry is non-negative and the entry at the argmax class is exactly 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    height: usize,
    width: usize,
    num_classes: usize,
    data: Vec<f64>,
}

impl DistanceField {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Distance vector of one pixel.
    pub fn pixel(&self, pixel: usize) -> &[f64] {
        let k = self.num_classes;
        &self.data[pixel * k..(pixel + 1) * k]
    }

    /// Largest distance of one pixel (the gap to the smallest logit).
    pub fn max_distance(&self, pixel: usize) -> f64 {
        self.pixel(pixel).iter().copied().fold(0.0, f64::max)
    }
}

/// Boolean per-pixel mask, e.g. the foreground filter used by metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct BoolField {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BoolField {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self, FieldError> {
        if height == 0 || width == 0 {
            return Err(FieldError::EmptyField { height, width });
        }
        if data.len() != height * width {
            return Err(FieldError::DataLength {
                got: data.len(),
                height,
                width,
                classes: 1,
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// All-true mask of the given shape.
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, pixel: usize) -> bool {
        self.data[pixel]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Index of the largest element; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable per-pixel softmax (subtracts the per-pixel maximum
/// before exponentiation).
pub fn softmax(logits: &LogitField) -> ProbField {
    let k = logits.num_classes();
    let mut data = Vec::with_capacity(logits.data().len());
    for pixel in 0..logits.num_pixels() {
        let vec = logits.pixel(pixel);
        let max = vec[argmax(vec)];
        let mut sum = 0.0;
        let start = data.len();
        for &l in vec {
            let e = (l - max).exp();
            data.push(e);
            sum += e;
        }
        for value in &mut data[start..start + k] {
            *value /= sum;
        }
    }
    ProbField {
        height: logits.height(),
        width: logits.width(),
        num_classes: k,
        data,
    }
}

/// Per-pixel log-softmax written into `out` (length K), returning the
/// log-sum-exp of the pixel's logits.
pub(crate) fn log_softmax_into(logits: &[f64], out: &mut [f64]) -> f64 {
    let max = logits[argmax(logits)];
    let mut sum = 0.0;
    for &l in logits {
        sum += (l - max).exp();
    }
    let lse = max + sum.ln();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = l - lse;
    }
    lse
}

/// Per-pixel vector of gaps between the winning logit and every class logit.
pub fn logit_distances(logits: &LogitField) -> DistanceField {
    let mut data = Vec::with_capacity(logits.data().len());
    for pixel in 0..logits.num_pixels() {
        let vec = logits.pixel(pixel);
        let max = vec[argmax(vec)];
        for &l in vec {
            data.push(max - l);
        }
    }
    DistanceField {
        height: logits.height(),
        width: logits.width(),
        num_classes: logits.num_classes(),
        data,
    }
}

/// Check that two per-class fields share the same grid and class count.
pub(crate) fn check_same_shape(
    (lh, lw, lk): (usize, usize, usize),
    (rh, rw, rk): (usize, usize, usize),
) -> Result<(), FieldError> {
    if (lh, lw, lk) != (rh, rw, rk) {
        return Err(FieldError::ShapeMismatch {
            left: format!("{lh}x{lw}x{lk}"),
            right: format!("{rh}x{rw}x{rk}"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_pixel(logits: &[f64]) -> LogitField {
        LogitField::new(1, 1, logits.len(), logits.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let probs = softmax(&single_pixel(&[0.0, 0.0, 0.0]));
        for &p in probs.pixel(0) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_saturates_without_overflow() {
        let probs = softmax(&single_pixel(&[1000.0, 0.0]));
        let p = probs.pixel(0);
        assert!(p[0].is_finite() && p[1].is_finite());
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!(p[1] < 1e-12);
    }

    #[test]
    fn softmax_matches_closed_form() {
        // e/(e+1) and 1/(e+1), evaluated in extended precision.
        let probs = softmax(&single_pixel(&[1.0, 0.0]));
        let p = probs.pixel(0);
        assert!((p[0] - 0.73105857863000487925).abs() < 1e-15);
        assert!((p[1] - 0.26894142136999512075).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_non_finite_input() {
        let err = LogitField::new(1, 1, 2, vec![f64::NAN, 0.0]).unwrap_err();
        assert!(matches!(err, FieldError::NonFinite { .. }));
    }

    #[test]
    fn distances_by_direct_subtraction() {
        let d = logit_distances(&single_pixel(&[2.0, 1.0, 0.0]));
        assert_eq!(d.pixel(0), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn distances_of_equal_logits_are_zero() {
        let d = logit_distances(&single_pixel(&[3.5, 3.5, 3.5]));
        assert_eq!(d.pixel(0), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn distances_with_negative_logits() {
        let d = logit_distances(&single_pixel(&[-1.0, 3.0, 0.5]));
        assert_eq!(d.pixel(0), &[4.0, 0.0, 2.5]);
    }

    #[test]
    fn argmax_breaks_ties_toward_lowest_index() {
        assert_eq!(argmax(&[1.0, 2.0, 2.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }

    #[test]
    fn label_field_rejects_out_of_range_values() {
        let err = LabelField::new(1, 2, 2, 0, vec![0, 2]).unwrap_err();
        assert!(matches!(err, FieldError::LabelOutOfRange { .. }));
    }

    #[test]
    fn soft_labels_must_sum_to_one() {
        let err = SoftLabelField::new(1, 1, 2, vec![0.6, 0.6]).unwrap_err();
        assert!(matches!(err, FieldError::NotNormalized { .. }));
    }

    #[test]
    fn log_softmax_returns_logsumexp() {
        let logits = [1.0, 2.0, 3.0];
        let mut out = [0.0; 3];
        let lse = log_softmax_into(&logits, &mut out);
        let direct: f64 = logits.iter().map(|l| l.exp()).sum::<f64>().ln();
        assert!((lse - direct).abs() < 1e-12);
        let sum: f64 = out.iter().map(|v| v.exp()).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn logit_vec() -> impl Strategy<Value = Vec<f64>> {
            (2usize..=8).prop_flat_map(|k| prop::collection::vec(-30.0..30.0f64, k))
        }

        proptest! {
            #[test]
            fn distance_is_zero_exactly_at_argmax(logits in logit_vec()) {
                let field = single_pixel(&logits);
                let d = logit_distances(&field);
                let winner = argmax(&logits);
                prop_assert_eq!(d.pixel(0)[winner], 0.0);
                for (k, &dist) in d.pixel(0).iter().enumerate() {
                    prop_assert!(dist >= 0.0);
                    if k < winner {
                        // Lowest-index tie-break: earlier classes are strictly below.
                        prop_assert!(dist > 0.0);
                    }
                }
            }

            #[test]
            fn softmax_is_shift_invariant(logits in logit_vec(), shift in -50.0..50.0f64) {
                let base = softmax(&single_pixel(&logits));
                let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
                let moved = softmax(&single_pixel(&shifted));
                for (a, b) in base.pixel(0).iter().zip(moved.pixel(0)) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }

            #[test]
            fn logsumexp_sandwich(logits in logit_vec()) {
                let k = logits.len() as f64;
                let max = logits[argmax(&logits)];
                let lse: f64 = {
                    let mut out = vec![0.0; logits.len()];
                    log_softmax_into(&logits, &mut out)
                };
                prop_assert!(lse >= max - 1e-9);
                prop_assert!(lse <= max + k.ln() + 1e-9);
            }
        }
    }
}
