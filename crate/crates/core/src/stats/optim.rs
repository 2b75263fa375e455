//! Dense BFGS minimizer with Armijo backtracking.
//!
//! The objective may return `None` where it is undefined (here: parameter
//! points whose model-implied covariance is not positive definite); the line
//! search treats those points as infinitely bad and backtracks.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    /// Convergence threshold on the gradient infinity norm.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Per-iteration cap on the step infinity norm. Keeps nearly-flat
    /// directions (e.g. factor correlations whose loadings are ~0) from
    /// drifting arbitrarily far before convergence.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions { grad_tol: 1e-6, max_iter: 2000, max_step: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_inf_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
const CURVATURE_EPS: f64 = 1e-12;

pub fn minimize<F, G>(f: F, grad: G, x0: DVector<f64>, options: BfgsOptions) -> BfgsOutcome
where
    F: Fn(&DVector<f64>) -> Option<f64>,
    G: Fn(&DVector<f64>) -> Option<DVector<f64>>,
{
    let n = x0.len();
    let mut x = x0;
    let mut fx = match f(&x) {
        Some(v) => v,
        None => {
            return BfgsOutcome {
                x,
                value: f64::INFINITY,
                grad_inf_norm: f64::INFINITY,
                converged: false,
                iterations: 0,
            }
        }
    };
    let mut g = match grad(&x) {
        Some(g) => g,
        None => {
            return BfgsOutcome {
                x,
                value: fx,
                grad_inf_norm: f64::INFINITY,
                converged: false,
                iterations: 0,
            }
        }
    };
    let mut h_inv = DMatrix::<f64>::identity(n, n);

    for iteration in 0..options.max_iter {
        let g_norm = g.amax();
        if g_norm <= options.grad_tol {
            return BfgsOutcome {
                x,
                value: fx,
                grad_inf_norm: g_norm,
                converged: true,
                iterations: iteration,
            };
        }

        let mut direction = -(&h_inv * &g);
        if direction.dot(&g) >= 0.0 {
            // Curvature information went stale; fall back to steepest descent.
            h_inv = DMatrix::identity(n, n);
            direction = -g.clone();
        }
        let step_norm = direction.amax();
        if step_norm > options.max_step {
            direction *= options.max_step / step_norm;
        }

        let slope = direction.dot(&g);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let candidate = &x + &direction * alpha;
            if let Some(fc) = f(&candidate) {
                if fc <= fx + ARMIJO_C1 * alpha * slope {
                    accepted = Some((candidate, fc));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            return BfgsOutcome {
                x,
                value: fx,
                grad_inf_norm: g_norm,
                converged: false,
                iterations: iteration,
            };
        };
        let Some(g_new) = grad(&x_new) else {
            return BfgsOutcome {
                x,
                value: fx,
                grad_inf_norm: g_norm,
                converged: false,
                iterations: iteration,
            };
        };

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > CURVATURE_EPS * s.norm() * y.norm() {
            // BFGS inverse update: H <- (I - s yT / sy) H (I - y sT / sy) + s sT / sy
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // Expanded form avoids building the rank-one projectors.
            let sst = &s * s.transpose();
            let hyst = &hy * s.transpose();
            h_inv = h_inv.clone() - (&hyst + hyst.transpose()) * rho
                + sst * (rho * rho * yhy + rho);
        }

        x = x_new;
        fx = f_new;
        g = g_new;
    }

    let g_norm = g.amax();
    BfgsOutcome {
        x,
        value: fx,
        grad_inf_norm: g_norm,
        converged: g_norm <= options.grad_tol,
        iterations: options.max_iter,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic_bowl() {
        let f = |x: &DVector<f64>| {
            Some((x[0] - 3.0).powi(2) + 4.0 * (x[1] + 1.0).powi(2))
        };
        let g = |x: &DVector<f64>| {
            Some(DVector::from_vec(vec![2.0 * (x[0] - 3.0), 8.0 * (x[1] + 1.0)]))
        };
        let out = minimize(f, g, DVector::from_vec(vec![0.0, 0.0]), BfgsOptions::default());
        assert!(out.converged);
        assert!((out.x[0] - 3.0).abs() < 1e-6);
        assert!((out.x[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &DVector<f64>| {
            Some((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2))
        };
        let g = |x: &DVector<f64>| {
            Some(DVector::from_vec(vec![
                -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                200.0 * (x[1] - x[0] * x[0]),
            ]))
        };
        let out = minimize(
            f,
            g,
            DVector::from_vec(vec![-1.2, 1.0]),
            BfgsOptions { grad_tol: 1e-8, max_iter: 5000, ..BfgsOptions::default() },
        );
        assert!(out.converged, "grad norm stuck at {}", out.grad_inf_norm);
        assert!((out.x[0] - 1.0).abs() < 1e-5);
        assert!((out.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn respects_undefined_regions() {
        // Objective undefined for x <= 0; minimum at x = 1 inside the domain.
        let f = |x: &DVector<f64>| {
            if x[0] <= 0.0 {
                None
            } else {
                Some(x[0] - x[0].ln())
            }
        };
        let g = |x: &DVector<f64>| {
            if x[0] <= 0.0 {
                None
            } else {
                Some(DVector::from_vec(vec![1.0 - 1.0 / x[0]]))
            }
        };
        let out = minimize(f, g, DVector::from_vec(vec![3.0]), BfgsOptions::default());
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-6);
    }
}
