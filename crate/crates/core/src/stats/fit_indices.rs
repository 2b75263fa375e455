//! Model fit indices for a converged factor solution: GFI (absolute), IFI
//! (incremental against the independence baseline), RMSEA (noncentrality).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cfa::CfaResult;
use super::covariance::CovarianceMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitIndices {
    pub gfi: f64,
    pub ifi: f64,
    pub rmsea: f64,
}

#[derive(Debug, Error)]
pub enum FitIndicesError {
    #[error("fit did not converge; no indices to compute")]
    NotConverged,
    #[error("baseline (independence) model cannot be fit: {0}")]
    BaselineFitFailed(String),
    #[error("model has zero degrees of freedom; RMSEA is undefined")]
    ZeroDegreesOfFreedom,
}

/// Computes GFI, IFI and RMSEA for a converged solution against the sample
/// covariance it was fit to. The independence baseline (free variances, zero
/// covariances) is fit internally; its ML discrepancy has the closed form
/// sum(ln s_ii) - ln|S|.
pub fn fit_indices(result: &CfaResult, s: &CovarianceMatrix) -> Result<FitIndices, FitIndicesError> {
    if !result.converged {
        return Err(FitIndicesError::NotConverged);
    }
    if result.degrees_of_freedom <= 0 {
        return Err(FitIndicesError::ZeroDegreesOfFreedom);
    }
    let n = result.n as f64;
    let p = s.values.nrows();

    let sigma_hat = result.implied_covariance();
    let sigma_inv = sigma_hat
        .clone()
        .cholesky()
        .ok_or_else(|| {
            FitIndicesError::BaselineFitFailed("implied covariance is not PD".into())
        })?
        .inverse();
    let a = &sigma_inv * &s.values;
    let identity = DMatrix::<f64>::identity(p, p);
    let resid = &a - &identity;
    let gfi = 1.0 - (&resid * &resid).trace() / (&a * &a).trace();

    let ln_det_s = s
        .values
        .clone()
        .cholesky()
        .ok_or_else(|| FitIndicesError::BaselineFitFailed("sample covariance is not PD".into()))?
        .l()
        .diagonal()
        .iter()
        .map(|d| 2.0 * d.ln())
        .sum::<f64>();
    let mut ln_diag_sum = 0.0;
    for i in 0..p {
        let v = s.values[(i, i)];
        if v <= 0.0 {
            return Err(FitIndicesError::BaselineFitFailed(format!(
                "variable '{}' has non-positive variance",
                s.labels.get(i).map(String::as_str).unwrap_or("?")
            )));
        }
        ln_diag_sum += v.ln();
    }
    let f_baseline = ln_diag_sum - ln_det_s;
    let chi_baseline = (n - 1.0) * f_baseline;
    let df_model = result.degrees_of_freedom as f64;

    let chi_model = result.chi_square.ok_or(FitIndicesError::NotConverged)?;
    let ifi = (chi_baseline - chi_model) / (chi_baseline - df_model);
    let rmsea = ((chi_model - df_model).max(0.0) / (df_model * (n - 1.0))).sqrt();

    Ok(FitIndices { gfi, ifi, rmsea })
}

/// Renders an index the way fit tables print them: two decimals, no leading
/// zero (".81", "1.00", "-.05").
pub fn format_index(value: f64) -> String {
    let s = format!("{value:.2}");
    if let Some(rest) = s.strip_prefix("0.") {
        format!(".{rest}")
    } else if let Some(rest) = s.strip_prefix("-0.") {
        format!("-.{rest}")
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::cfa::{fit_cfa, CfaOptions, CfaSpec};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(p: usize, factors: usize) -> CfaSpec {
        CfaSpec {
            factor_names: (0..factors).map(|k| format!("F{k}")).collect(),
            item_labels: (0..p).map(|i| format!("x{i}")).collect(),
            item_factor: (0..p).map(|i| i * factors / p).collect(),
            excluded_items: Vec::new(),
        }
    }

    fn sample_cov(rows: &[Vec<f64>]) -> CovarianceMatrix {
        let n = rows.len();
        let p = rows[0].len();
        let means: Vec<f64> =
            (0..p).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let mut values = DMatrix::zeros(p, p);
        for row in rows {
            for i in 0..p {
                for j in 0..p {
                    values[(i, j)] += (row[i] - means[i]) * (row[j] - means[j]);
                }
            }
        }
        values /= n as f64 - 1.0;
        CovarianceMatrix {
            labels: (0..p).map(|i| format!("x{i}")).collect(),
            values,
            n,
        }
    }

    #[test]
    fn perfect_fit_pins_gfi_one_rmsea_zero() {
        // Build S exactly as the model implies, then feed it back.
        let spec = spec(8, 2);
        let lambda = 0.7;
        let mut values = DMatrix::zeros(8, 8);
        for i in 0..8 {
            for j in 0..8 {
                if spec.item_factor[i] == spec.item_factor[j] {
                    values[(i, j)] = lambda * lambda;
                }
            }
            values[(i, i)] = 1.0;
        }
        let s = CovarianceMatrix { labels: spec.item_labels.clone(), values, n: 500 };
        let result = fit_cfa(&s, &spec, &CfaOptions::default()).unwrap();
        assert!(result.converged);
        let indices = fit_indices(&result, &s).unwrap();
        assert!(result.chi_square.unwrap() < 1e-6);
        assert!((indices.gfi - 1.0).abs() < 1e-6);
        assert_eq!(indices.rmsea, 0.0);
    }

    #[test]
    fn model_no_better_than_baseline_puts_ifi_near_zero() {
        // Covariance the hypothesized model provably cannot absorb: within
        // each factor block every pair correlates NEGATIVELY and equally.
        // A factor implies sign(r_ij) = s_i * s_j, whose product around any
        // 3-cycle is positive, while this data's is negative; the off-block
        // correlations are zero so the factor correlation stays put. The
        // model ends up no better than the independence baseline.
        let spec = spec(16, 2); // factor 0: items 0-7, factor 1: items 8-15
        let c = 0.13;
        let mut values = DMatrix::identity(16, 16);
        for block in 0..2 {
            for i in 0..8 {
                for j in 0..8 {
                    if i != j {
                        values[(block * 8 + i, block * 8 + j)] = -c;
                    }
                }
            }
        }
        let s = CovarianceMatrix { labels: spec.item_labels.clone(), values, n: 2000 };
        let result = fit_cfa(&s, &spec, &CfaOptions::default()).unwrap();
        assert!(result.converged, "failure: {:?}", result.failure);
        let indices = fit_indices(&result, &s).unwrap();
        // Baseline discrepancy for two negative-equicorrelated blocks.
        let f_baseline = -2.0 * ((1.0f64 - 7.0 * c).ln() + 7.0 * (1.0f64 + c).ln());
        let chi_baseline = (s.n as f64 - 1.0) * f_baseline;
        assert!(
            result.chi_square.unwrap() > 0.85 * chi_baseline,
            "model chi-square {:?} should stay near the baseline {}",
            result.chi_square,
            chi_baseline
        );
        assert!(indices.ifi.abs() < 0.1, "IFI = {}", indices.ifi);
    }

    #[test]
    fn misfitting_model_has_positive_rmsea() {
        // One strong common factor, but we fit two uncorrelated-ish factors;
        // the added structure cannot absorb the cross-block covariance.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let rows: Vec<Vec<f64>> = (0..2000)
            .map(|_| {
                let g: f64 = rng.sample(rand_distr::StandardNormal);
                (0..6)
                    .map(|_| {
                        let e: f64 = rng.sample(rand_distr::StandardNormal);
                        0.8 * g + 0.36f64.sqrt() * e
                    })
                    .collect()
            })
            .collect();
        let s = sample_cov(&rows);
        let result = fit_cfa(&s, &spec(6, 1), &CfaOptions::default()).unwrap();
        assert!(result.converged);
        let one_factor = fit_indices(&result, &s).unwrap();
        // A correct one-factor model fits well.
        assert!(one_factor.rmsea < 0.05, "rmsea = {}", one_factor.rmsea);
        assert!(one_factor.gfi > 0.95);
        assert!(one_factor.ifi > 0.9);
    }

    #[test]
    fn table_style_formatting_drops_the_leading_zero() {
        assert_eq!(format_index(0.8123), ".81");
        assert_eq!(format_index(0.7489), ".75");
        assert_eq!(format_index(0.0634), ".06");
        assert_eq!(format_index(1.0), "1.00");
        assert_eq!(format_index(-0.05), "-.05");
    }
}
