//! Challenge-style aggregation of per-metric (or per-case) method ranks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RankError {
    #[error("need at least 2 methods, got {0}")]
    TooFewMethods(usize),
    #[error("method {method} is missing a score for metric {metric}")]
    MissingScore { method: String, metric: String },
    #[error("ragged case coverage: method {method} has {got} cases, expected {expected}")]
    RaggedCases {
        method: String,
        got: usize,
        expected: usize,
    },
    #[error("unknown metric {0}")]
    UnknownMetric(String),
}

/// Whether larger or smaller scores are better for one metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    HigherBetter,
    LowerBetter,
}

/// Competition ranks (1 = best) for one score column, with tied scores
/// receiving the average of their positions.
pub fn rank_scores(scores: &[f64], orientation: Orientation) -> Vec<f64> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let cmp = scores[a].total_cmp(&scores[b]);
        match orientation {
            Orientation::LowerBetter => cmp,
            Orientation::HigherBetter => cmp.reverse(),
        }
    });
    let mut ranks = vec![0.0; n];
    let mut position = 0;
    while position < n {
        let mut end = position;
        while end + 1 < n && scores[order[end + 1]] == scores[order[position]] {
            end += 1;
        }
        // Positions are 1-based; ties share the average of their span.
        let average = (position + 1 + end + 1) as f64 / 2.0;
        for &index in &order[position..=end] {
            ranks[index] = average;
        }
        position = end + 1;
    }
    ranks
}

/// Methods-by-metrics score table with per-metric ranks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankMatrix {
    pub methods: Vec<String>,
    pub metrics: Vec<String>,
    pub orientations: Vec<Orientation>,
    /// `scores[method][metric]`.
    pub scores: Vec<Vec<f64>>,
    /// `ranks[method][metric]`, average-tie competition ranks.
    pub ranks: Vec<Vec<f64>>,
}

/// Sum-rank aggregation: rank totals per method and the final ordering.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SumRankResult {
    pub matrix: RankMatrix,
    /// Sum of per-metric ranks per method.
    pub totals: Vec<f64>,
    /// Final rank per method, from totals sorted ascending.
    pub final_ranks: Vec<f64>,
}

/// Rank methods per metric on their mean scores, sum the ranks, and rank the
/// sums ascending.
pub fn sum_rank(
    methods: &[String],
    metrics: &[String],
    orientations: &[Orientation],
    scores: &[Vec<f64>],
) -> Result<SumRankResult, RankError> {
    if methods.len() < 2 {
        return Err(RankError::TooFewMethods(methods.len()));
    }
    for (method, row) in methods.iter().zip(scores) {
        for (metric, &score) in metrics.iter().zip(row) {
            if !score.is_finite() {
                return Err(RankError::MissingScore {
                    method: method.clone(),
                    metric: metric.clone(),
                });
            }
        }
        if row.len() != metrics.len() {
            return Err(RankError::MissingScore {
                method: method.clone(),
                metric: metrics.get(row.len()).cloned().unwrap_or_default(),
            });
        }
    }
    let mut ranks = vec![vec![0.0; metrics.len()]; methods.len()];
    for (metric_index, &orientation) in orientations.iter().enumerate() {
        let column: Vec<f64> = scores.iter().map(|row| row[metric_index]).collect();
        for (method_index, rank) in rank_scores(&column, orientation).into_iter().enumerate() {
            ranks[method_index][metric_index] = rank;
        }
    }
    let totals: Vec<f64> = ranks.iter().map(|row| row.iter().sum()).collect();
    let final_ranks = rank_scores(&totals, Orientation::LowerBetter);
    Ok(SumRankResult {
        matrix: RankMatrix {
            methods: methods.to_vec(),
            metrics: metrics.to_vec(),
            orientations: orientations.to_vec(),
            scores: scores.to_vec(),
            ranks,
        },
        totals,
        final_ranks,
    })
}

/// Mean-case-rank aggregation result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanCaseRankResult {
    pub methods: Vec<String>,
    /// Mean over cases of the per-case mean-over-metrics rank.
    pub mean_ranks: Vec<f64>,
    /// Final rank per method, from mean ranks sorted ascending.
    pub final_ranks: Vec<f64>,
}

/// Rank methods per metric within every case, average over metrics to get the
/// method's case rank, then average over cases.
///
/// `scores[method][case][metric]`; every method must cover every case.
pub fn mean_case_rank(
    methods: &[String],
    orientations: &[Orientation],
    scores: &[Vec<Vec<f64>>],
) -> Result<MeanCaseRankResult, RankError> {
    if methods.len() < 2 {
        return Err(RankError::TooFewMethods(methods.len()));
    }
    let num_cases = scores[0].len();
    for (method, per_case) in methods.iter().zip(scores) {
        if per_case.len() != num_cases {
            return Err(RankError::RaggedCases {
                method: method.clone(),
                got: per_case.len(),
                expected: num_cases,
            });
        }
        for case in per_case {
            if case.len() != orientations.len() {
                return Err(RankError::MissingScore {
                    method: method.clone(),
                    metric: format!("metric {}", case.len()),
                });
            }
        }
    }
    let num_metrics = orientations.len();
    let mut case_rank_sums = vec![0.0; methods.len()];
    for case in 0..num_cases {
        let mut metric_rank_sums = vec![0.0; methods.len()];
        for (metric, &orientation) in orientations.iter().enumerate() {
            let column: Vec<f64> = scores
                .iter()
                .map(|per_case| per_case[case][metric])
                .collect();
            for (method_index, rank) in rank_scores(&column, orientation).into_iter().enumerate()
            {
                metric_rank_sums[method_index] += rank;
            }
        }
        for (sum, metric_sum) in case_rank_sums.iter_mut().zip(&metric_rank_sums) {
            *sum += metric_sum / num_metrics as f64;
        }
    }
    let mean_ranks: Vec<f64> = case_rank_sums
        .into_iter()
        .map(|sum| sum / num_cases as f64)
        .collect();
    let final_ranks = rank_scores(&mean_ranks, Orientation::LowerBetter);
    Ok(MeanCaseRankResult {
        methods: methods.to_vec(),
        mean_ranks,
        final_ranks,
    })
}
