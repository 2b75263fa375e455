//! Welch's unequal-variance t test with Welch-Satterthwaite degrees of
//! freedom and a two-sided p from the t distribution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::special::student_t_two_sided_p;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

#[derive(Debug, Error)]
pub enum WelchError {
    #[error("each sample needs at least 2 observations (got {0} and {1})")]
    TooFewObservations(usize, usize),
    #[error("both samples have zero variance")]
    DegenerateSample,
}

fn mean_and_var(sample: &[f64]) -> (f64, f64) {
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let var = sample.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult, WelchError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(WelchError::TooFewObservations(a.len(), b.len()));
    }
    let (mean_a, var_a) = mean_and_var(a);
    let (mean_b, var_b) = mean_and_var(b);
    let na = a.len() as f64;
    let nb = b.len() as f64;
    let se2 = var_a / na + var_b / nb;
    if se2 <= 0.0 {
        return Err(WelchError::DegenerateSample);
    }
    let t = (mean_a - mean_b) / se2.sqrt();
    // Satterthwaite collapses to the pooled df when n and variances match;
    // take that branch explicitly so the identity is exact.
    let df = if a.len() == b.len() && var_a == var_b {
        na + nb - 2.0
    } else {
        let qa = var_a / na;
        let qb = var_b / nb;
        (qa + qb).powi(2) / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0))
    };
    let p = student_t_two_sided_p(t, df);
    Ok(WelchResult { t, df, p })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_give_t_zero_p_one() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let result = welch_t_test(&a, &a).unwrap();
        assert_eq!(result.t, 0.0);
        assert_eq!(result.p, 1.0);
    }

    #[test]
    fn equal_n_equal_variance_reduces_to_pooled_df() {
        let a: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 7.5).collect(); // same variance exactly
        let result = welch_t_test(&a, &b).unwrap();
        assert_eq!(result.df, 98.0, "df must be exactly 2n-2");
    }

    #[test]
    fn matches_an_independent_reference_implementation() {
        // Expected values computed with scipy.stats.ttest_ind(equal_var=False)
        // on exactly these samples:
        //   a = [12.9, 10.2, 13.7, 11.1, 14.0, 12.4, 10.9, 13.1]
        //   b = [10.1, 9.8, 12.0, 11.4, 10.6, 9.9]
        let a = [12.9, 10.2, 13.7, 11.1, 14.0, 12.4, 10.9, 13.1];
        let b = [10.1, 9.8, 12.0, 11.4, 10.6, 9.9];
        let result = welch_t_test(&a, &b).unwrap();
        assert!((result.t - 2.695_751_752_899_869).abs() < 1e-6, "t = {}", result.t);
        assert!((result.df - 11.795_490_680_143_288).abs() < 1e-6, "df = {}", result.df);
        assert!((result.p - 0.019_717_250_303_515).abs() < 1e-6, "p = {}", result.p);
    }

    #[test]
    fn degenerate_samples_are_rejected() {
        assert!(matches!(
            welch_t_test(&[1.0], &[1.0, 2.0]),
            Err(WelchError::TooFewObservations(1, 2))
        ));
        assert!(matches!(
            welch_t_test(&[2.0, 2.0], &[3.0, 3.0]),
            Err(WelchError::DegenerateSample)
        ));
    }

    #[test]
    fn one_constant_sample_is_fine() {
        let result = welch_t_test(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(result.t.is_finite());
        assert!(result.df > 0.0);
    }
}
