//! Region-overlap (Dice) and boundary-distance (average surface distance)
//! metrics on hard label maps.

use crate::field::{FieldError, LabelField};
use crate::metrics::MetricError;

/// Per-class Dice scores plus their foreground mean.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapScores {
    /// One score per class; a class absent from both maps scores 1.
    pub per_class: Vec<f64>,
    /// Mean over non-background classes.
    pub mean: f64,
}

/// Per-class surface distances plus their foreground mean.
///
/// A class missing from either map has no boundary correspondence and is
/// recorded as undefined, excluded from the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceScores {
    pub per_class: Vec<Option<f64>>,
    /// Mean over non-background classes with defined distances; `None` when
    /// no class qualifies.
    pub mean: Option<f64>,
}

fn check_same_grid(pred: &LabelField, gt: &LabelField) -> Result<(), MetricError> {
    if (pred.height(), pred.width(), pred.num_classes())
        != (gt.height(), gt.width(), gt.num_classes())
    {
        return Err(MetricError::Field(FieldError::ShapeMismatch {
            left: format!(
                "{}x{}x{}",
                pred.height(),
                pred.width(),
                pred.num_classes()
            ),
            right: format!("{}x{}x{}", gt.height(), gt.width(), gt.num_classes()),
        }));
    }
    Ok(())
}

/// Dice similarity coefficient per class: `2|P ∩ G| / (|P| + |G|)`.
///
/// Counts stay in integer arithmetic until the final division, so equal
/// inputs give rationally exact results.
pub fn dsc(pred: &LabelField, gt: &LabelField) -> Result<OverlapScores, MetricError> {
    check_same_grid(pred, gt)?;
    let k = gt.num_classes();
    let mut intersection = vec![0u64; k];
    let mut pred_count = vec![0u64; k];
    let mut gt_count = vec![0u64; k];
    for pixel in 0..gt.num_pixels() {
        let p = pred.class(pixel);
        let g = gt.class(pixel);
        pred_count[p] += 1;
        gt_count[g] += 1;
        if p == g {
            intersection[p] += 1;
        }
    }
    let per_class: Vec<f64> = (0..k)
        .map(|c| {
            let denominator = pred_count[c] + gt_count[c];
            if denominator == 0 {
                1.0
            } else {
                2.0 * intersection[c] as f64 / denominator as f64
            }
        })
        .collect();
    let background = gt.background_class();
    let foreground: Vec<f64> = (0..k)
        .filter(|&c| c != background)
        .map(|c| per_class[c])
        .collect();
    let mean = foreground.iter().sum::<f64>() / foreground.len() as f64;
    Ok(OverlapScores { per_class, mean })
}

/// Boundary pixels of one class under 4-connectivity erosion: a class pixel
/// with at least one 4-neighbor outside the class (the image border counts
/// as outside).
fn class_boundary(labels: &LabelField, class: usize) -> Vec<(usize, usize)> {
    let (height, width) = (labels.height(), labels.width());
    let inside = |y: isize, x: isize| -> bool {
        y >= 0
            && x >= 0
            && (y as usize) < height
            && (x as usize) < width
            && labels.class(y as usize * width + x as usize) == class
    };
    let mut boundary = Vec::new();
    for y in 0..height {
        for x in 0..width {
            if labels.class(y * width + x) != class {
                continue;
            }
            let (yi, xi) = (y as isize, x as isize);
            if !(inside(yi - 1, xi) && inside(yi + 1, xi) && inside(yi, xi - 1) && inside(yi, xi + 1))
            {
                boundary.push((y, x));
            }
        }
    }
    boundary
}

fn mean_nearest_distance(from: &[(usize, usize)], to: &[(usize, usize)]) -> f64 {
    let mut sum = 0.0;
    for &(fy, fx) in from {
        let mut best = f64::INFINITY;
        for &(ty, tx) in to {
            let dy = fy as f64 - ty as f64;
            let dx = fx as f64 - tx as f64;
            let dist2 = dy * dy + dx * dx;
            if dist2 < best {
                best = dist2;
            }
        }
        sum += best.sqrt();
    }
    sum / from.len() as f64
}

/// Average surface distance per class: the symmetric mean of exact nearest
/// boundary-pixel Euclidean distances, averaged over both directions.
pub fn asd(pred: &LabelField, gt: &LabelField) -> Result<SurfaceScores, MetricError> {
    check_same_grid(pred, gt)?;
    let k = gt.num_classes();
    let mut per_class = Vec::with_capacity(k);
    for class in 0..k {
        let pred_boundary = class_boundary(pred, class);
        let gt_boundary = class_boundary(gt, class);
        if pred_boundary.is_empty() || gt_boundary.is_empty() {
            per_class.push(None);
            continue;
        }
        let forward = mean_nearest_distance(&pred_boundary, &gt_boundary);
        let backward = mean_nearest_distance(&gt_boundary, &pred_boundary);
        per_class.push(Some(0.5 * (forward + backward)));
    }
    let background = gt.background_class();
    let defined: Vec<f64> = (0..k)
        .filter(|&c| c != background)
        .filter_map(|c| per_class[c])
        .collect();
    let mean = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    Ok(SurfaceScores { per_class, mean })
}
