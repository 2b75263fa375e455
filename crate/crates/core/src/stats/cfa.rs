//! Confirmatory factor analysis by normal-theory maximum likelihood.
//!
//! The model is Sigma(theta) = Lambda Phi Lambda' + Theta with a simple
//! structure: each included item loads on exactly one factor, factor
//! variances are fixed to 1 (so loadings and factor covariances come out
//! standardized), residual variances are log-parameterized to stay positive,
//! and the factor correlations are free symmetric entries. Freeing the
//! correlations directly is what lets a degenerate dataset drive the fitted
//! factor covariance outside the positive-definite cone — a failure mode the
//! fit reports instead of masking.
//!
//! The discrepancy function is
//!   F(theta) = ln|Sigma| + tr(S Sigma^-1) - ln|S| - p
//! minimized by BFGS with analytic gradients; chi-square = (n-1) F at the
//! optimum.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::covariance::CovarianceMatrix;
use super::optim::{self, BfgsOptions};

/// Eigenvalues below this count as "negative" when declaring a matrix
/// non-positive-definite.
pub const PD_EIGEN_TOL: f64 = -1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedItem {
    pub label: String,
    pub reason: String,
}

/// Model specification: which item loads on which factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfaSpec {
    pub factor_names: Vec<String>,
    /// Labels of included items, aligned with the covariance matrix order.
    pub item_labels: Vec<String>,
    /// Factor index per included item.
    pub item_factor: Vec<usize>,
    #[serde(default)]
    pub excluded_items: Vec<ExcludedItem>,
}

impl CfaSpec {
    pub fn n_factors(&self) -> usize {
        self.factor_names.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_labels.len()
    }

    pub fn n_parameters(&self) -> usize {
        let m = self.n_factors();
        2 * self.n_items() + m * (m - 1) / 2
    }

    pub fn degrees_of_freedom(&self) -> i64 {
        let p = self.n_items() as i64;
        p * (p + 1) / 2 - self.n_parameters() as i64
    }

    pub fn validate(&self) -> Result<(), CfaError> {
        if self.factor_names.is_empty() {
            return Err(CfaError::SpecInvalid("no factors defined".into()));
        }
        if self.item_labels.len() != self.item_factor.len() {
            return Err(CfaError::SpecInvalid("item labels and factor map differ in length".into()));
        }
        for (label, &f) in self.item_labels.iter().zip(&self.item_factor) {
            if f >= self.factor_names.len() {
                return Err(CfaError::SpecInvalid(format!(
                    "item '{label}' maps to factor index {f}, but only {} factors exist",
                    self.factor_names.len()
                )));
            }
        }
        for (k, name) in self.factor_names.iter().enumerate() {
            let count = self.item_factor.iter().filter(|&&f| f == k).count();
            if count < 2 {
                return Err(CfaError::SpecInvalid(format!(
                    "factor '{name}' has {count} items after exclusions, needs at least 2"
                )));
            }
        }
        if self.degrees_of_freedom() < 0 {
            return Err(CfaError::SpecInvalid(format!(
                "model is under-identified: {} parameters for {} moments",
                self.n_parameters(),
                self.n_items() * (self.n_items() + 1) / 2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CfaOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Additional jittered starts tried when a fit fails to converge.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for CfaOptions {
    fn default() -> Self {
        CfaOptions { grad_tol: 1e-6, max_iter: 4000, restarts: 5, seed: 0 }
    }
}

/// Diagnostic attached to a fit that completed without a usable solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CfaFailure {
    /// A covariance matrix involved in the solution has a negative
    /// eigenvalue. `matrix` names which one.
    NonPositiveDefinite { matrix: String, eigenvalue: f64 },
    NotConverged { grad_norm: f64 },
}

impl std::fmt::Display for CfaFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CfaFailure::NonPositiveDefinite { matrix, eigenvalue } => write!(
                f,
                "{matrix} was not positive definite (one eigenvalue was negative: {eigenvalue:.6})"
            ),
            CfaFailure::NotConverged { grad_norm } => {
                write!(f, "estimation did not converge (gradient norm {grad_norm:.3e})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfaResult {
    pub spec: CfaSpec,
    /// Standardized loading per included item.
    pub loadings: Vec<f64>,
    /// Residual variance per included item.
    pub residuals: Vec<f64>,
    /// Factor covariance (unit diagonal). Row-major m x m.
    pub phi: Vec<Vec<f64>>,
    /// (n-1) * F at the optimum; absent when estimation failed.
    pub chi_square: Option<f64>,
    pub degrees_of_freedom: i64,
    pub n: usize,
    pub f_min: Option<f64>,
    pub converged: bool,
    pub failure: Option<CfaFailure>,
}

impl CfaResult {
    pub fn phi_matrix(&self) -> DMatrix<f64> {
        let m = self.phi.len();
        DMatrix::from_fn(m, m, |i, j| self.phi[i][j])
    }

    /// Model-implied covariance Lambda Phi Lambda' + Theta.
    pub fn implied_covariance(&self) -> DMatrix<f64> {
        let model = ModelShape {
            item_factor: self.spec.item_factor.clone(),
            n_factors: self.spec.n_factors(),
        };
        model.sigma(&self.loadings, &self.residuals, &self.phi_matrix())
    }
}

#[derive(Debug, Error)]
pub enum CfaError {
    #[error("invalid model specification: {0}")]
    SpecInvalid(String),
    #[error("covariance matrix is {got}x{got} but the spec names {expected} items")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("sample size {0} is too small to fit")]
    SampleTooSmall(usize),
}

/// Structure shared by objective, gradient and result reconstruction.
pub(crate) struct ModelShape {
    pub item_factor: Vec<usize>,
    pub n_factors: usize,
}

impl ModelShape {
    fn p(&self) -> usize {
        self.item_factor.len()
    }

    pub fn sigma(&self, loadings: &[f64], residuals: &[f64], phi: &DMatrix<f64>) -> DMatrix<f64> {
        let p = self.p();
        let mut sigma = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                sigma[(i, j)] =
                    loadings[i] * loadings[j] * phi[(self.item_factor[i], self.item_factor[j])];
            }
            sigma[(i, i)] += residuals[i];
        }
        sigma
    }

    /// Lambda as a dense p x m matrix.
    fn lambda(&self, loadings: &[f64]) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.p(), self.n_factors);
        for (i, &f) in self.item_factor.iter().enumerate() {
            l[(i, f)] = loadings[i];
        }
        l
    }
}

struct Packing {
    p: usize,
    m: usize,
}

impl Packing {
    fn unpack(&self, params: &DVector<f64>) -> (Vec<f64>, Vec<f64>, DMatrix<f64>) {
        let loadings: Vec<f64> = params.as_slice()[..self.p].to_vec();
        let residuals: Vec<f64> =
            params.as_slice()[self.p..2 * self.p].iter().map(|t| t.exp()).collect();
        let mut phi = DMatrix::identity(self.m, self.m);
        let mut idx = 2 * self.p;
        for k in 0..self.m {
            for l in (k + 1)..self.m {
                phi[(k, l)] = params[idx];
                phi[(l, k)] = params[idx];
                idx += 1;
            }
        }
        (loadings, residuals, phi)
    }
}

/// F_ML and its analytic gradient in the packed parameterization
/// [loadings, log residual variances, phi off-diagonals].
fn objective(
    shape: &ModelShape,
    packing: &Packing,
    s: &DMatrix<f64>,
    ln_det_s: f64,
    params: &DVector<f64>,
) -> Option<f64> {
    let (loadings, residuals, phi) = packing.unpack(params);
    let sigma = shape.sigma(&loadings, &residuals, &phi);
    let chol = sigma.clone().cholesky()?;
    let ln_det_sigma = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let sigma_inv = chol.inverse();
    let trace = sigma_inv.iter().zip(s.iter()).map(|(a, b)| a * b).sum::<f64>();
    let p = packing.p as f64;
    let value = ln_det_sigma + trace - ln_det_s - p;
    value.is_finite().then_some(value)
}

fn gradient(
    shape: &ModelShape,
    packing: &Packing,
    s: &DMatrix<f64>,
    params: &DVector<f64>,
) -> Option<DVector<f64>> {
    let (loadings, residuals, phi) = packing.unpack(params);
    let sigma = shape.sigma(&loadings, &residuals, &phi);
    let chol = sigma.cholesky()?;
    let sigma_inv = chol.inverse();
    // G = Sigma^-1 - Sigma^-1 S Sigma^-1; dF/dtheta_j = tr(G dSigma/dtheta_j)
    let g = &sigma_inv - &sigma_inv * s * &sigma_inv;

    let lambda = shape.lambda(&loadings);
    let v = &lambda * &phi; // p x m, column k = Lambda Phi e_k
    let gv = &g * &v; // p x m
    let w = lambda.transpose() * &g * &lambda; // m x m

    let mut out = DVector::zeros(params.len());
    for i in 0..packing.p {
        out[i] = 2.0 * gv[(i, shape.item_factor[i])];
    }
    for i in 0..packing.p {
        // Chain rule through theta_i = exp(t_i).
        out[packing.p + i] = g[(i, i)] * residuals[i];
    }
    let mut idx = 2 * packing.p;
    for k in 0..packing.m {
        for l in (k + 1)..packing.m {
            out[idx] = 2.0 * w[(k, l)];
            idx += 1;
        }
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

pub(crate) fn min_eigenvalue(matrix: &DMatrix<f64>) -> f64 {
    let sym = (matrix + matrix.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Fits the model to a sample covariance matrix.
///
/// Structural problems (bad spec, shape mismatch) are `Err`; estimation
/// problems (non-convergence, non-positive-definite solutions, a degenerate
/// sample matrix) come back as `Ok` with `converged = false` and a diagnostic
/// so a pipeline can report the failure and continue.
pub fn fit_cfa(
    s: &CovarianceMatrix,
    spec: &CfaSpec,
    options: &CfaOptions,
) -> Result<CfaResult, CfaError> {
    spec.validate()?;
    let p = spec.n_items();
    if s.values.nrows() != p {
        return Err(CfaError::DimensionMismatch { got: s.values.nrows(), expected: p });
    }
    if s.n < 2 {
        return Err(CfaError::SampleTooSmall(s.n));
    }

    let failure_result = |failure: CfaFailure| CfaResult {
        spec: spec.clone(),
        loadings: vec![0.0; p],
        residuals: vec![0.0; p],
        phi: vec![vec![0.0; spec.n_factors()]; spec.n_factors()],
        chi_square: None,
        degrees_of_freedom: spec.degrees_of_freedom(),
        n: s.n,
        f_min: None,
        converged: false,
        failure: Some(failure),
    };

    // A sample covariance with a negative (or zero) eigenvalue cannot be fit
    // by normal-theory ML: ln|S| is undefined.
    let s_min_eig = min_eigenvalue(&s.values);
    if s_min_eig < 1e-10 {
        return Ok(failure_result(CfaFailure::NonPositiveDefinite {
            matrix: "sample covariance matrix".into(),
            eigenvalue: s_min_eig,
        }));
    }
    let ln_det_s = s
        .values
        .clone()
        .cholesky()
        .map(|c| 2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
        .unwrap_or_else(|| {
            let sym = (&s.values + s.values.transpose()) * 0.5;
            sym.symmetric_eigenvalues().iter().map(|e| e.max(1e-300).ln()).sum()
        });

    let shape = ModelShape { item_factor: spec.item_factor.clone(), n_factors: spec.n_factors() };
    let packing = Packing { p, m: spec.n_factors() };

    // Starting values: loadings 0.5, residuals at half the observed variance,
    // factor correlations 0.
    let mut start = DVector::zeros(spec.n_parameters());
    for i in 0..p {
        start[i] = 0.5;
        start[p + i] = (0.5 * s.values[(i, i)]).max(1e-4).ln();
    }

    let bfgs = BfgsOptions {
        grad_tol: options.grad_tol,
        max_iter: options.max_iter,
        ..BfgsOptions::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut best: Option<optim::BfgsOutcome> = None;
    for attempt in 0..=options.restarts {
        let x0 = if attempt == 0 {
            start.clone()
        } else {
            DVector::from_fn(start.len(), |i, _| start[i] + rng.gen_range(-0.2..0.2))
        };
        let outcome = optim::minimize(
            |x| objective(&shape, &packing, &s.values, ln_det_s, x),
            |x| gradient(&shape, &packing, &s.values, x),
            x0,
            bfgs,
        );
        let better = match &best {
            None => true,
            Some(b) => outcome.converged && (!b.converged || outcome.value < b.value),
        };
        if better {
            best = Some(outcome);
        }
        if best.as_ref().is_some_and(|b| b.converged) {
            break;
        }
    }
    let best = best.expect("at least one optimization attempt runs");

    let (mut loadings, residuals, mut phi) = packing.unpack(&best.x);
    // Factor sign is unidentified; orient each factor so its loading sum is
    // non-negative.
    for k in 0..packing.m {
        let total: f64 = loadings
            .iter()
            .zip(&shape.item_factor)
            .filter(|(_, &f)| f == k)
            .map(|(l, _)| *l)
            .sum();
        if total < 0.0 {
            for (l, &f) in loadings.iter_mut().zip(&shape.item_factor) {
                if f == k {
                    *l = -*l;
                }
            }
            for j in 0..packing.m {
                if j != k {
                    phi[(k, j)] = -phi[(k, j)];
                    phi[(j, k)] = -phi[(j, k)];
                }
            }
        }
    }

    let f_min = best.value;
    let chi_square = (s.n as f64 - 1.0) * f_min;
    let phi_rows: Vec<Vec<f64>> =
        (0..packing.m).map(|i| (0..packing.m).map(|j| phi[(i, j)]).collect()).collect();

    let mut failure = None;
    if !best.converged {
        failure = Some(CfaFailure::NotConverged { grad_norm: best.grad_inf_norm });
    } else {
        let phi_eig = min_eigenvalue(&phi);
        if phi_eig < PD_EIGEN_TOL {
            failure = Some(CfaFailure::NonPositiveDefinite {
                matrix: "factor covariance matrix".into(),
                eigenvalue: phi_eig,
            });
        } else {
            let sigma = shape.sigma(&loadings, &residuals, &phi);
            let sigma_eig = min_eigenvalue(&sigma);
            if sigma_eig < PD_EIGEN_TOL {
                failure = Some(CfaFailure::NonPositiveDefinite {
                    matrix: "model-implied covariance matrix".into(),
                    eigenvalue: sigma_eig,
                });
            }
        }
    }

    Ok(CfaResult {
        spec: spec.clone(),
        loadings,
        residuals,
        phi: phi_rows,
        chi_square: Some(chi_square),
        degrees_of_freedom: spec.degrees_of_freedom(),
        n: s.n,
        f_min: Some(f_min),
        converged: failure.is_none(),
        failure,
    })
}

/// Builds a one-factor spec over the given item labels.
pub fn one_factor_spec(factor_name: &str, item_labels: &[String]) -> CfaSpec {
    CfaSpec {
        factor_names: vec![factor_name.to_string()],
        item_labels: item_labels.to_vec(),
        item_factor: vec![0; item_labels.len()],
        excluded_items: Vec::new(),
    }
}

/// Exposes F_ML and its analytic gradient for verification against finite
/// differences.
pub fn fml_and_gradient(
    s: &CovarianceMatrix,
    spec: &CfaSpec,
    params: &[f64],
) -> Option<(f64, Vec<f64>)> {
    let shape = ModelShape { item_factor: spec.item_factor.clone(), n_factors: spec.n_factors() };
    let packing = Packing { p: spec.n_items(), m: spec.n_factors() };
    let ln_det_s = 2.0
        * s.values
            .clone()
            .cholesky()?
            .l()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>();
    let x = DVector::from_column_slice(params);
    let f = objective(&shape, &packing, &s.values, ln_det_s, &x)?;
    let g = gradient(&shape, &packing, &s.values, &x)?;
    Some((f, g.as_slice().to_vec()))
}

/// Natural-parameter gradient of F_ML (loadings, residual variances, phi
/// off-diagonals), used by the sandwich standard errors.
pub(crate) fn fml_natural_gradient(
    spec: &CfaSpec,
    s: &DMatrix<f64>,
    loadings: &[f64],
    residuals: &[f64],
    phi: &DMatrix<f64>,
) -> Option<DVector<f64>> {
    let shape = ModelShape { item_factor: spec.item_factor.clone(), n_factors: spec.n_factors() };
    let p = spec.n_items();
    let m = spec.n_factors();
    let sigma = shape.sigma(loadings, residuals, phi);
    let chol = sigma.cholesky()?;
    let sigma_inv = chol.inverse();
    let g = &sigma_inv - &sigma_inv * s * &sigma_inv;
    let lambda = shape.lambda(loadings);
    let v = &lambda * phi;
    let gv = &g * &v;
    let w = lambda.transpose() * &g * &lambda;
    let mut out = DVector::zeros(spec.n_parameters());
    for i in 0..p {
        out[i] = 2.0 * gv[(i, shape.item_factor[i])];
    }
    for i in 0..p {
        out[p + i] = g[(i, i)];
    }
    let mut idx = 2 * p;
    for k in 0..m {
        for l in (k + 1)..m {
            out[idx] = 2.0 * w[(k, l)];
            idx += 1;
        }
    }
    Some(out)
}
