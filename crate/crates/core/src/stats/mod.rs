//! Psychometric estimators: covariance and correlation, reliability
//! coefficients (alpha, omega, glb), confirmatory factor analysis with
//! sandwich standard errors and fit indices, Welch's t test, and trait bias.

pub mod bias;
pub mod cfa;
pub mod correlation;
pub mod covariance;
pub mod fit_indices;
pub mod glb;
pub mod optim;
pub mod reliability;
pub mod sandwich;
pub mod special;
pub mod welch;
