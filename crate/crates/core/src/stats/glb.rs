//! Greatest lower bound to reliability via minimum-trace factor analysis.
//!
//! glb = 1 - tr(Theta*) / total variance, where Theta* is the diagonal,
//! entrywise-nonnegative matrix maximizing tr(Theta) subject to C - Theta
//! staying positive semidefinite. The semidefinite program is solved by an
//! operator-splitting iteration that alternates a eigenvalue projection onto
//! the PSD cone with a proximal step on the diagonal-constraint set
//! (off-diagonals pinned to C, diagonal in [0, diag C]). A final restoration
//! pass nudges the diagonal until C - Theta is numerically PSD, so the
//! returned value is always attained by a feasible decomposition and can only
//! sit on or above the true optimum.

use nalgebra::DMatrix;
use thiserror::Error;

use super::covariance::CovarianceMatrix;

#[derive(Debug, Error)]
pub enum GlbError {
    #[error("covariance matrix is not positive semidefinite (eigenvalue {0:.3e})")]
    NotPsdInput(f64),
    #[error("need at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error("total variance is not positive")]
    DegenerateTotalVariance,
    #[error("projection iteration did not converge within {0} iterations")]
    NoConvergence(usize),
}

const EIG_TOL: f64 = 1e-8;
const CONV_TOL: f64 = 1e-8;
const MAX_ITER: usize = 10_000;

fn project_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eigen = sym.symmetric_eigen();
    let mut scaled = eigen.eigenvectors.clone();
    for (k, val) in eigen.eigenvalues.iter().enumerate() {
        scaled.column_mut(k).scale_mut(val.max(0.0));
    }
    scaled * eigen.eigenvectors.transpose()
}

/// Computes the greatest lower bound to reliability of a PSD covariance
/// matrix, to roughly 1e-6 in the reliability units.
pub fn greatest_lower_bound(cov: &CovarianceMatrix) -> Result<f64, GlbError> {
    let p = cov.values.nrows();
    if p < 2 {
        return Err(GlbError::TooFewItems(p));
    }
    let c = (&cov.values + cov.values.transpose()) * 0.5;
    let min_eig = c.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
    if min_eig < -EIG_TOL {
        return Err(GlbError::NotPsdInput(min_eig));
    }
    let total: f64 = c.iter().sum();
    if total <= 1e-12 {
        return Err(GlbError::DegenerateTotalVariance);
    }

    // Splitting variables: m lives in the diagonal-constraint set, x in the
    // PSD cone, u is the scaled dual.
    let mut x = c.clone();
    let mut u = DMatrix::<f64>::zeros(p, p);
    let mut m = DMatrix::<f64>::zeros(p, p);
    let mut rho = 1.0;
    let scale = c.norm().max(1.0);
    // Residual balancing only during warmup: rescaling the dual variable
    // resets an almost-converged state, so after warmup rho stays fixed and
    // the fixed-penalty contraction finishes the job.
    let warmup = 500;

    let mut converged_at = None;
    for iter in 0..MAX_ITER {
        // Proximal step on tr(M) within the diagonal-constraint set.
        for i in 0..p {
            for j in 0..p {
                m[(i, j)] = if i == j {
                    (x[(i, i)] - u[(i, i)] - 1.0 / rho).clamp(0.0, c[(i, i)])
                } else {
                    c[(i, j)]
                };
            }
        }
        // Eigenvalue projection onto the PSD cone.
        let x_prev = x.clone();
        x = project_psd(&(&m + &u));
        u += &m - &x;

        let primal = (&m - &x).norm();
        let dual = rho * (&x - &x_prev).norm();
        if primal <= CONV_TOL * scale && dual <= CONV_TOL * scale {
            converged_at = Some(iter);
            break;
        }
        if iter < warmup && iter % 10 == 9 {
            if primal > 10.0 * dual {
                rho = (rho * 2.0).min(1e6);
                u /= 2.0;
            } else if dual > 10.0 * primal {
                rho = (rho / 2.0).max(1e-6);
                u *= 2.0;
            }
        }
    }
    if converged_at.is_none() {
        return Err(GlbError::NoConvergence(MAX_ITER));
    }

    // Feasibility restoration: shrink Theta until C - Theta is PSD, so the
    // reported bound is attained by an actual decomposition.
    let mut theta: Vec<f64> = (0..p).map(|i| (c[(i, i)] - m[(i, i)]).max(0.0)).collect();
    for _ in 0..100 {
        let mut reduced = c.clone();
        for i in 0..p {
            reduced[(i, i)] -= theta[i];
        }
        let lambda_min =
            reduced.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
        if lambda_min >= -1e-12 {
            break;
        }
        let bump = -lambda_min + 1e-12;
        for t in theta.iter_mut() {
            *t = (*t - bump).max(0.0);
        }
    }

    let theta_trace: f64 = theta.iter().sum();
    Ok(1.0 - theta_trace / total)
}
