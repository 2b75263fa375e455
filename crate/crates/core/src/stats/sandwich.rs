//! Huber-White sandwich standard errors for a fitted factor model.
//!
//! For row i with deviation z_i, the per-row negative log-likelihood
//! contribution (means saturated, constants dropped) is
//!   l_i = 1/2 [ ln|Sigma| + z_i' Sigma^-1 z_i ]
//! The sandwich covariance of the estimates is A^-1 B A^-1 / n with
//! A the average Hessian of l_i and B the average outer product of per-row
//! gradients, both evaluated at the fitted parameters in their natural
//! parameterization (loadings, residual variances, factor covariances).
//! A is obtained by centrally differencing the analytic average score; B is
//! accumulated row by row with the structure of dSigma/dtheta exploited.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::cfa::{fml_natural_gradient, CfaResult};

#[derive(Debug, Error)]
pub enum SandwichError {
    #[error("fit did not converge; no standard errors to compute")]
    NotConverged,
    #[error("data has {got} columns but the model names {expected} items")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("average Hessian is singular")]
    SingularHessian,
    #[error("need more rows than parameters ({rows} rows, {params} parameters)")]
    TooFewRows { rows: usize, params: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustSeResult {
    /// Parameter labels: `lambda:<item>`, `theta:<item>`, `phi:<f1>~<f2>`.
    pub labels: Vec<String>,
    pub robust: Vec<f64>,
    pub naive: Vec<f64>,
}

fn parameter_labels(result: &CfaResult) -> Vec<String> {
    let mut labels = Vec::with_capacity(result.spec.n_parameters());
    for item in &result.spec.item_labels {
        labels.push(format!("lambda:{item}"));
    }
    for item in &result.spec.item_labels {
        labels.push(format!("theta:{item}"));
    }
    let names = &result.spec.factor_names;
    for k in 0..names.len() {
        for l in (k + 1)..names.len() {
            labels.push(format!("phi:{}~{}", names[k], names[l]));
        }
    }
    labels
}

/// Sandwich and naive (inverse average Hessian) standard errors from row-level
/// data. `rows` must be complete cases in the model's item order.
pub fn robust_standard_errors(
    result: &CfaResult,
    rows: &[Vec<f64>],
) -> Result<RobustSeResult, SandwichError> {
    if !result.converged {
        return Err(SandwichError::NotConverged);
    }
    let p = result.spec.n_items();
    let q = result.spec.n_parameters();
    let n = rows.len();
    if n <= q {
        return Err(SandwichError::TooFewRows { rows: n, params: q });
    }
    if rows.iter().any(|r| r.len() != p) {
        return Err(SandwichError::DimensionMismatch {
            got: rows.first().map(Vec::len).unwrap_or(0),
            expected: p,
        });
    }

    let means: Vec<f64> =
        (0..p).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut s_n = DMatrix::<f64>::zeros(p, p);
    for row in rows {
        for i in 0..p {
            for j in 0..p {
                s_n[(i, j)] += (row[i] - means[i]) * (row[j] - means[j]);
            }
        }
    }
    s_n /= n as f64;

    let m = result.spec.n_factors();
    let phi = result.phi_matrix();

    // Average score as a function of the natural parameters; its Jacobian at
    // the estimate is the average Hessian A.
    let score = |params: &DVector<f64>| -> Option<DVector<f64>> {
        let loadings: Vec<f64> = params.as_slice()[..p].to_vec();
        let residuals: Vec<f64> = params.as_slice()[p..2 * p].to_vec();
        if residuals.iter().any(|&r| r <= 0.0) {
            return None;
        }
        let mut phi_local = DMatrix::identity(m, m);
        let mut idx = 2 * p;
        for k in 0..m {
            for l in (k + 1)..m {
                phi_local[(k, l)] = params[idx];
                phi_local[(l, k)] = params[idx];
                idx += 1;
            }
        }
        fml_natural_gradient(&result.spec, &s_n, &loadings, &residuals, &phi_local)
            .map(|g| g * 0.5)
    };

    let mut estimate = DVector::zeros(q);
    for i in 0..p {
        estimate[i] = result.loadings[i];
        estimate[p + i] = result.residuals[i];
    }
    let mut idx = 2 * p;
    for k in 0..m {
        for l in (k + 1)..m {
            estimate[idx] = phi[(k, l)];
            idx += 1;
        }
    }

    let mut a = DMatrix::<f64>::zeros(q, q);
    for j in 0..q {
        let h = 1e-5 * estimate[j].abs().max(1.0);
        let mut plus = estimate.clone();
        let mut minus = estimate.clone();
        plus[j] += h;
        minus[j] -= h;
        let gp = score(&plus).ok_or(SandwichError::SingularHessian)?;
        let gm = score(&minus).ok_or(SandwichError::SingularHessian)?;
        let column = (gp - gm) / (2.0 * h);
        a.set_column(j, &column);
    }
    let a = (&a + a.transpose()) * 0.5;

    // Per-row scores, exploiting the sparse structure of dSigma/dtheta.
    let shape_factor = &result.spec.item_factor;
    let sigma = result.implied_covariance();
    let sigma_inv = sigma.cholesky().ok_or(SandwichError::SingularHessian)?.inverse();
    let mut lambda = DMatrix::<f64>::zeros(p, m);
    for (i, &f) in shape_factor.iter().enumerate() {
        lambda[(i, f)] = result.loadings[i];
    }
    let v = &lambda * &phi; // p x m
    let si_v = &sigma_inv * &v; // p x m
    let lt_si_l = lambda.transpose() * &sigma_inv * &lambda; // m x m

    let mut b = DMatrix::<f64>::zeros(q, q);
    let mut z = DVector::<f64>::zeros(p);
    let mut s_row = DVector::<f64>::zeros(q);
    for row in rows {
        for i in 0..p {
            z[i] = row[i] - means[i];
        }
        let u = &sigma_inv * &z;
        let vt_u = v.transpose() * &u; // m
        let lt_u = lambda.transpose() * &u; // m
        for i in 0..p {
            // d l / d lambda_i = 1/2 (c_j - u' dSigma u) with
            // dSigma = e_i v_k' + v_k e_i'.
            let k = shape_factor[i];
            s_row[i] = si_v[(i, k)] - u[i] * vt_u[k];
            s_row[p + i] = 0.5 * (sigma_inv[(i, i)] - u[i] * u[i]);
        }
        let mut idx = 2 * p;
        for k in 0..m {
            for l in (k + 1)..m {
                s_row[idx] = lt_si_l[(k, l)] - lt_u[k] * lt_u[l];
                idx += 1;
            }
        }
        b.syger(1.0, &s_row, &s_row, 1.0);
    }
    // syger filled the lower triangle; mirror it.
    for i in 0..q {
        for j in (i + 1)..q {
            b[(i, j)] = b[(j, i)];
        }
    }
    b /= n as f64;

    let a_inv = a.clone().try_inverse().ok_or(SandwichError::SingularHessian)?;
    let robust_cov = &a_inv * &b * &a_inv / n as f64;
    let naive_cov = &a_inv / n as f64;

    let labels = parameter_labels(result);
    let take_diag = |mat: &DMatrix<f64>| -> Result<Vec<f64>, SandwichError> {
        mat.diagonal()
            .iter()
            .map(|&v| {
                if v.is_finite() && v > 0.0 {
                    Ok(v.sqrt())
                } else {
                    Err(SandwichError::SingularHessian)
                }
            })
            .collect()
    };
    Ok(RobustSeResult {
        labels,
        robust: take_diag(&robust_cov)?,
        naive: take_diag(&naive_cov)?,
    })
}
