//! Sample covariance with explicit missing-data policies.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingHandling {
    /// Drop any row with a missing value in any selected column.
    Listwise,
    /// Use all complete pairs per cell, with pair-specific means.
    Pairwise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    pub labels: Vec<String>,
    pub values: DMatrix<f64>,
    /// Rows used. Under pairwise handling this is the smallest pair count.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceOutcome {
    pub matrix: CovarianceMatrix,
    /// Labels of columns with (numerically) zero variance; retained in the
    /// matrix but callers usually exclude them downstream.
    pub zero_variance: Vec<String>,
}

#[derive(Debug, Error)]
pub enum CovarianceError {
    #[error("need at least 3 rows after {policy:?} deletion, got {rows}")]
    TooFewRows { policy: MissingHandling, rows: usize },
    #[error("columns are empty")]
    NoColumns,
    #[error("column lengths differ")]
    RaggedColumns,
}

const ZERO_VAR_EPS: f64 = 1e-12;

/// Unbiased (n-1) sample covariance over labeled columns with missing cells.
pub fn covariance_matrix(
    columns: &[(String, Vec<Option<f64>>)],
    missing: MissingHandling,
) -> Result<CovarianceOutcome, CovarianceError> {
    if columns.is_empty() {
        return Err(CovarianceError::NoColumns);
    }
    let rows = columns[0].1.len();
    if columns.iter().any(|(_, c)| c.len() != rows) {
        return Err(CovarianceError::RaggedColumns);
    }
    let labels: Vec<String> = columns.iter().map(|(l, _)| l.clone()).collect();
    let p = columns.len();

    match missing {
        MissingHandling::Listwise => {
            let complete: Vec<usize> = (0..rows)
                .filter(|&r| columns.iter().all(|(_, c)| c[r].is_some()))
                .collect();
            let n = complete.len();
            if n < 3 {
                return Err(CovarianceError::TooFewRows { policy: missing, rows: n });
            }
            let means: Vec<f64> = columns
                .iter()
                .map(|(_, c)| complete.iter().map(|&r| c[r].unwrap()).sum::<f64>() / n as f64)
                .collect();
            let mut values = DMatrix::zeros(p, p);
            for i in 0..p {
                for j in i..p {
                    let mut acc = 0.0;
                    for &r in &complete {
                        acc += (columns[i].1[r].unwrap() - means[i])
                            * (columns[j].1[r].unwrap() - means[j]);
                    }
                    let cov = acc / (n - 1) as f64;
                    values[(i, j)] = cov;
                    values[(j, i)] = cov;
                }
            }
            let zero_variance = flag_zero_variance(&labels, &values);
            Ok(CovarianceOutcome { matrix: CovarianceMatrix { labels, values, n }, zero_variance })
        }
        MissingHandling::Pairwise => {
            let mut values = DMatrix::zeros(p, p);
            let mut min_n = usize::MAX;
            for i in 0..p {
                for j in i..p {
                    let pairs: Vec<(f64, f64)> = (0..rows)
                        .filter_map(|r| match (columns[i].1[r], columns[j].1[r]) {
                            (Some(a), Some(b)) => Some((a, b)),
                            _ => None,
                        })
                        .collect();
                    let n = pairs.len();
                    if n < 3 {
                        return Err(CovarianceError::TooFewRows { policy: missing, rows: n });
                    }
                    min_n = min_n.min(n);
                    let mean_a = pairs.iter().map(|(a, _)| a).sum::<f64>() / n as f64;
                    let mean_b = pairs.iter().map(|(_, b)| b).sum::<f64>() / n as f64;
                    let cov = pairs
                        .iter()
                        .map(|(a, b)| (a - mean_a) * (b - mean_b))
                        .sum::<f64>()
                        / (n - 1) as f64;
                    values[(i, j)] = cov;
                    values[(j, i)] = cov;
                }
            }
            let zero_variance = flag_zero_variance(&labels, &values);
            Ok(CovarianceOutcome {
                matrix: CovarianceMatrix { labels, values, n: min_n },
                zero_variance,
            })
        }
    }
}

fn flag_zero_variance(labels: &[String], values: &DMatrix<f64>) -> Vec<String> {
    labels
        .iter()
        .enumerate()
        .filter(|(i, _)| values[(*i, *i)].abs() < ZERO_VAR_EPS)
        .map(|(_, l)| l.clone())
        .collect()
}
