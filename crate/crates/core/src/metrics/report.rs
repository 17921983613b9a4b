//! Per-case metric reports, their aggregation, and the CSV formats consumed
//! by ranking and external plotting.

use serde::{Deserialize, Serialize};

use crate::field::{log_softmax_into, LabelField, LogitField};
use crate::metrics::{cece, dsc, ece, evaluation_mask, masked_nll};
use crate::metrics::{MetricError, MetricSettings, ReliabilityTable};

/// Every metric for one method on one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub case_id: String,
    /// Per-class Dice, background included in the vector.
    pub dsc_per_class: Vec<f64>,
    /// Per-class surface distance in pixels; undefined classes are `None`.
    pub asd_per_class: Vec<Option<f64>>,
    /// Mean Dice over non-background classes.
    pub mean_dsc: f64,
    /// Mean surface distance over defined non-background classes.
    pub mean_asd: Option<f64>,
    pub ece: f64,
    pub cece: f64,
    pub nll: f64,
}

/// Evaluate one case from raw logits, optionally scaled by a temperature.
pub fn evaluate_case(
    method: &str,
    case_id: &str,
    logits: &LogitField,
    temperature: Option<f64>,
    gt: &LabelField,
    settings: &MetricSettings,
) -> Result<MetricReport, MetricError> {
    let scaled;
    let logits = match temperature {
        Some(t) => {
            if !(t.is_finite() && t > 0.0) {
                return Err(MetricError::InvalidTemperature(t));
            }
            scaled = logits.scaled(1.0 / t);
            &scaled
        }
        None => logits,
    };
    let probs = crate::field::softmax(logits);
    let pred = probs.argmax_labels(settings.background_class)?;

    // Re-key the ground truth against the configured background class.
    let gt = LabelField::new(
        gt.height(),
        gt.width(),
        gt.num_classes(),
        settings.background_class,
        gt.data().to_vec(),
    )?;
    let mask = evaluation_mask(settings.mask_rule, &pred, &gt, settings.background_class)?;

    let overlap = dsc(&pred, &gt)?;
    let surface = crate::metrics::asd(&pred, &gt)?;
    let (ece_value, _) = ece(&probs, &gt, &mask, settings.num_bins)?;
    let (cece_value, _) = cece(&probs, &gt, &mask, settings.num_bins)?;

    let k = logits.num_classes();
    let mut log_probs = vec![0.0; logits.num_pixels() * k];
    let mut scratch = vec![0.0; k];
    for pixel in 0..logits.num_pixels() {
        log_softmax_into(logits.pixel(pixel), &mut scratch);
        log_probs[pixel * k..(pixel + 1) * k].copy_from_slice(&scratch);
    }
    let nll = masked_nll(&log_probs, &gt, &mask)?;

    Ok(MetricReport {
        method: method.to_string(),
        case_id: case_id.to_string(),
        dsc_per_class: overlap.per_class,
        asd_per_class: surface.per_class,
        mean_dsc: overlap.mean,
        mean_asd: surface.mean,
        ece: ece_value,
        cece: cece_value,
        nll,
    })
}

/// Mean scores of one method over its cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub method: String,
    pub num_cases: usize,
    pub dsc: f64,
    /// Mean over cases with a defined surface distance.
    pub asd: Option<f64>,
    pub ece: f64,
    pub cece: f64,
    pub nll: f64,
}

/// Average one method's per-case reports.
pub fn summarize(method: &str, reports: &[&MetricReport]) -> MetricSummary {
    let n = reports.len() as f64;
    let asd_values: Vec<f64> = reports.iter().filter_map(|r| r.mean_asd).collect();
    MetricSummary {
        method: method.to_string(),
        num_cases: reports.len(),
        dsc: reports.iter().map(|r| r.mean_dsc).sum::<f64>() / n,
        asd: if asd_values.is_empty() {
            None
        } else {
            Some(asd_values.iter().sum::<f64>() / asd_values.len() as f64)
        },
        ece: reports.iter().map(|r| r.ece).sum::<f64>() / n,
        cece: reports.iter().map(|r| r.cece).sum::<f64>() / n,
        nll: reports.iter().map(|r| r.nll).sum::<f64>() / n,
    }
}

fn format_optional(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v}"),
        None => String::new(),
    }
}

/// One row per case: shared metric columns then per-class DSC/ASD columns.
pub fn per_case_csv(reports: &[MetricReport], num_classes: usize) -> String {
    let mut out = String::from("method,case_id,mean_dsc,mean_asd,ece,cece,nll");
    for class in 1..num_classes {
        out.push_str(&format!(",dsc_c{class}"));
    }
    for class in 1..num_classes {
        out.push_str(&format!(",asd_c{class}"));
    }
    out.push('\n');
    for report in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}",
            report.method,
            report.case_id,
            report.mean_dsc,
            format_optional(report.mean_asd),
            report.ece,
            report.cece,
            report.nll
        ));
        for class in 1..num_classes {
            out.push_str(&format!(",{}", report.dsc_per_class[class]));
        }
        for class in 1..num_classes {
            out.push_str(&format!(",{}", format_optional(report.asd_per_class[class])));
        }
        out.push('\n');
    }
    out
}

/// One row per method with its mean scores.
pub fn summary_csv(summaries: &[MetricSummary]) -> String {
    let mut out = String::from("method,dsc,asd,ece,cece,nll\n");
    for summary in summaries {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            summary.method,
            summary.dsc,
            format_optional(summary.asd),
            summary.ece,
            summary.cece,
            summary.nll
        ));
    }
    out
}

/// Plot-ready reliability table rows.
pub fn reliability_csv(table: &ReliabilityTable) -> String {
    let mut out = String::from("bin_lo,bin_hi,count,accuracy,confidence\n");
    for bin in 0..table.num_bins {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            table.bin_edges[bin],
            table.bin_edges[bin + 1],
            table.counts[bin],
            table.accuracies[bin],
            table.confidences[bin]
        ));
    }
    out
}
