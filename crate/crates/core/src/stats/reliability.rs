//! Internal-consistency coefficients: Cronbach's alpha and McDonald's omega.
//! The greatest lower bound lives in [`super::glb`].

use thiserror::Error;

use super::cfa::{fit_cfa, one_factor_spec, CfaFailure, CfaOptions};
use super::covariance::CovarianceMatrix;

#[derive(Debug, Error)]
pub enum ReliabilityError {
    #[error("need at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error("total variance is zero")]
    ZeroTotalVariance,
    #[error("one-factor fit failed: {0}")]
    FitFailed(String),
}

/// alpha = k/(k-1) (1 - sum of item variances / total variance), with the
/// total being the sum of every covariance entry.
pub fn cronbach_alpha(cov: &CovarianceMatrix) -> Result<f64, ReliabilityError> {
    let k = cov.values.nrows();
    if k < 2 {
        return Err(ReliabilityError::TooFewItems(k));
    }
    let total: f64 = cov.values.iter().sum();
    if total.abs() < 1e-12 {
        return Err(ReliabilityError::ZeroTotalVariance);
    }
    let item_var: f64 = cov.values.diagonal().iter().sum();
    Ok(k as f64 / (k as f64 - 1.0) * (1.0 - item_var / total))
}

/// omega = (sum lambda)^2 / ((sum lambda)^2 + sum theta) from a one-factor
/// solution on the (already keyed) covariance matrix.
pub fn mcdonald_omega(cov: &CovarianceMatrix, options: &CfaOptions) -> Result<f64, ReliabilityError> {
    let k = cov.values.nrows();
    if k < 2 {
        return Err(ReliabilityError::TooFewItems(k));
    }
    let spec = one_factor_spec("g", &cov.labels);
    spec.validate().map_err(|e| ReliabilityError::FitFailed(e.to_string()))?;
    let result = fit_cfa(cov, &spec, options)
        .map_err(|e| ReliabilityError::FitFailed(e.to_string()))?;
    if !result.converged {
        let reason = result
            .failure
            .as_ref()
            .map(CfaFailure::to_string)
            .unwrap_or_else(|| "unknown".into());
        return Err(ReliabilityError::FitFailed(reason));
    }
    let loading_sum: f64 = result.loadings.iter().sum();
    let theta_sum: f64 = result.residuals.iter().sum();
    let common = loading_sum * loading_sum;
    Ok(common / (common + theta_sum))
}
