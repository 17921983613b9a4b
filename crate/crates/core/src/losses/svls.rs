//! Spatially-varying label smoothing: one-hot label planes blurred by a
//! Gaussian kernel.

use crate::field::{LabelField, SoftLabelField};
use crate::losses::{require, LossError};

/// Blur each class plane of the one-hot encoding with a normalized Gaussian
/// kernel, then renormalize every per-pixel vector to sum 1.
///
/// Borders use zero padding; the renormalization restores the sum-to-1
/// invariant there. A kernel size of 1 is the identity.
pub fn svls_transform(
    labels: &LabelField,
    kernel_size: usize,
    sigma: f64,
) -> Result<SoftLabelField, LossError> {
    if kernel_size % 2 == 0 || kernel_size == 0 {
        return Err(LossError::EvenKernel(kernel_size));
    }
    require(
        sigma.is_finite() && sigma > 0.0,
        "svls_sigma",
        sigma,
        "must be finite and > 0",
    )?;
    let half = (kernel_size / 2) as isize;
    let mut kernel = Vec::with_capacity(kernel_size * kernel_size);
    let mut kernel_sum = 0.0;
    for dy in -half..=half {
        for dx in -half..=half {
            let w = (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp();
            kernel.push(w);
            kernel_sum += w;
        }
    }
    for w in &mut kernel {
        *w /= kernel_sum;
    }

    let (height, width, k) = (labels.height(), labels.width(), labels.num_classes());
    let mut data = vec![0.0; height * width * k];
    for y in 0..height {
        for x in 0..width {
            let pixel = y * width + x;
            let soft = &mut data[pixel * k..(pixel + 1) * k];
            let mut total = 0.0;
            for dy in -half..=half {
                let ny = y as isize + dy;
                if ny < 0 || ny >= height as isize {
                    continue;
                }
                for dx in -half..=half {
                    let nx = x as isize + dx;
                    if nx < 0 || nx >= width as isize {
                        continue;
                    }
                    let w = kernel[((dy + half) * kernel_size as isize + (dx + half)) as usize];
                    let neighbor = labels.class(ny as usize * width + nx as usize);
                    soft[neighbor] += w;
                    total += w;
                }
            }
            for value in soft.iter_mut() {
                *value /= total;
            }
        }
    }
    Ok(SoftLabelField::new(height, width, k, data)?)
}
