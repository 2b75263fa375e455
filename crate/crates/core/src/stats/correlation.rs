//! Pearson correlations with pairwise-complete deletion.

use serde::{Deserialize, Serialize};

/// Minimum complete pairs for a correlation to be reported.
pub const MIN_PAIRS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    /// `r[i][j]` is `None` when fewer than [`MIN_PAIRS`] complete pairs exist
    /// or a variable is constant over the pairs.
    pub r: Vec<Vec<Option<f64>>>,
    pub n: Vec<Vec<usize>>,
}

/// Pearson correlation of two complete vectors; `None` when either is
/// constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    if xs.is_empty() {
        return None;
    }
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Pearson correlation over the complete pairs of two columns with missing
/// cells. Returns `(r, n_pairs)`.
pub fn pearson_pairwise(xs: &[Option<f64>], ys: &[Option<f64>]) -> (Option<f64>, usize) {
    let pairs: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter_map(|(x, y)| match (x, y) {
            (Some(a), Some(b)) => Some((*a, *b)),
            _ => None,
        })
        .collect();
    let n = pairs.len();
    if n < MIN_PAIRS {
        return (None, n);
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    (pearson(&x, &y), n)
}

/// Symmetric correlation matrix over labeled columns, pairwise-complete.
/// Cells with too few pairs are missing, never fabricated.
pub fn correlation_matrix(columns: &[(String, Vec<Option<f64>>)]) -> CorrelationMatrix {
    let p = columns.len();
    let labels = columns.iter().map(|(l, _)| l.clone()).collect();
    let mut r = vec![vec![None; p]; p];
    let mut n = vec![vec![0usize; p]; p];
    for i in 0..p {
        for j in i..p {
            let (value, pairs) = pearson_pairwise(&columns[i].1, &columns[j].1);
            let value = if i == j { value.map(|_| 1.0) } else { value };
            r[i][j] = value;
            r[j][i] = value;
            n[i][j] = pairs;
            n[j][i] = pairs;
        }
    }
    CorrelationMatrix { labels, r, n }
}
