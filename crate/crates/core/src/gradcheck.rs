//! Central finite-difference gradients for validating analytic derivatives.

/// Central-difference gradient of `f` at `x` with the given step.
pub fn central_difference<F>(mut f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut point = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let original = point[i];
        point[i] = original + step;
        let plus = f(&point);
        point[i] = original - step;
        let minus = f(&point);
        point[i] = original;
        grad.push((plus - minus) / (2.0 * step));
    }
    grad
}

/// Largest per-coordinate relative error between two gradients.
///
/// The denominator is floored so coordinates where both gradients vanish
/// compare absolutely instead of dividing noise by noise.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
