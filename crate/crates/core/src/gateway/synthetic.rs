//! Deterministic synthetic respondent: a linear latent factor model with
//! ordinal thresholds. Every estimator downstream has a known ground truth
//! against it, which is what makes desk-scale verification of the whole
//! pipeline possible.
//!
//! Each persona draws one latent vector from N(0, Phi) — shared across all of
//! that persona's items, which is what makes within-persona responses
//! correlate. Item responses are loading * latent + residual noise,
//! discretized by the threshold cut points. Everything is keyed off
//! (seed, persona_id, item), so responses are reproducible regardless of
//! execution order or concurrency.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{RespondError, Respondent, RespondentKind};
use crate::prompt::PromptJob;
use crate::scales::Instrument;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WordingMode {
    /// The completion is just the digit.
    BareDigit,
    /// The digit is embedded in a short sentence.
    EmbeddedDigit,
    /// With probability p the completion contains no digit at all.
    NoDigitFraction(f64),
}

/// Generating model for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemModel {
    pub instrument_id: String,
    pub item_index: u32,
    pub factor: usize,
    pub loading: f64,
    pub residual_sd: f64,
    pub reverse_keyed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRespondentConfig {
    pub items: Vec<ItemModel>,
    /// Factor covariance, row-major, symmetric positive definite.
    pub factor_covariance: Vec<Vec<f64>>,
    /// Strictly increasing cut points mapping the continuous response to
    /// 1..=5.
    pub thresholds: [f64; 4],
    pub wording_mode: WordingMode,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("factor covariance is not positive definite")]
    CovarianceNotPd,
    #[error("thresholds must be strictly increasing")]
    ThresholdsNotIncreasing,
    #[error("no-digit fraction must lie in [0, 1], got {0}")]
    BadNoDigitFraction(f64),
    #[error("item list is empty")]
    NoItems,
    #[error("item {instrument_id} #{item_index} references factor {factor}, but only {n_factors} factors exist")]
    BadFactorIndex { instrument_id: String, item_index: u32, factor: usize, n_factors: usize },
    #[error("residual sd must be non-negative, got {0}")]
    NegativeResidualSd(f64),
}

impl SyntheticRespondentConfig {
    /// One factor per subscale, identity factor covariance, uniform loading
    /// and residual, symmetric thresholds.
    pub fn from_instruments(
        instruments: &[Instrument],
        loading: f64,
        residual_sd: f64,
        seed: u64,
        wording_mode: WordingMode,
    ) -> SyntheticRespondentConfig {
        let mut factor_of: BTreeMap<(String, String), usize> = BTreeMap::new();
        let mut n_factors = 0usize;
        let mut items = Vec::new();
        for instrument in instruments {
            for subscale in &instrument.subscales {
                factor_of.insert((instrument.id.clone(), subscale.id.clone()), n_factors);
                n_factors += 1;
            }
            for item in &instrument.items {
                items.push(ItemModel {
                    instrument_id: instrument.id.clone(),
                    item_index: item.index,
                    factor: factor_of[&(instrument.id.clone(), item.subscale.clone())],
                    loading,
                    residual_sd,
                    reverse_keyed: item.reverse_keyed,
                });
            }
        }
        let factor_covariance = (0..n_factors)
            .map(|i| (0..n_factors).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        SyntheticRespondentConfig {
            items,
            factor_covariance,
            thresholds: [-1.5, -0.5, 0.5, 1.5],
            wording_mode,
            seed,
        }
    }

    pub fn n_factors(&self) -> usize {
        self.factor_covariance.len()
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        if self.items.is_empty() {
            return Err(SyntheticError::NoItems);
        }
        let m = self.n_factors();
        for item in &self.items {
            if item.factor >= m {
                return Err(SyntheticError::BadFactorIndex {
                    instrument_id: item.instrument_id.clone(),
                    item_index: item.item_index,
                    factor: item.factor,
                    n_factors: m,
                });
            }
            if item.residual_sd < 0.0 {
                return Err(SyntheticError::NegativeResidualSd(item.residual_sd));
            }
        }
        if !self.thresholds.windows(2).all(|w| w[0] < w[1]) {
            return Err(SyntheticError::ThresholdsNotIncreasing);
        }
        if let WordingMode::NoDigitFraction(p) = self.wording_mode {
            if !(0.0..=1.0).contains(&p) {
                return Err(SyntheticError::BadNoDigitFraction(p));
            }
        }
        let phi = DMatrix::from_fn(m, m, |i, j| self.factor_covariance[i][j]);
        if phi.cholesky().is_none() {
            return Err(SyntheticError::CovarianceNotPd);
        }
        Ok(())
    }
}

pub struct SyntheticRespondent {
    config: SyntheticRespondentConfig,
    chol: DMatrix<f64>,
    item_of: BTreeMap<(String, u32), usize>,
}

fn seeded_rng(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for part in parts {
        hasher.update([0x1f]);
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut seed_bytes = [0u8; 32];
    seed_bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed_bytes)
}

impl SyntheticRespondent {
    pub fn new(config: SyntheticRespondentConfig) -> Result<SyntheticRespondent, SyntheticError> {
        config.validate()?;
        let m = config.n_factors();
        let phi = DMatrix::from_fn(m, m, |i, j| config.factor_covariance[i][j]);
        let chol = phi.cholesky().expect("validated PD").l();
        let item_of = config
            .items
            .iter()
            .enumerate()
            .map(|(pos, item)| ((item.instrument_id.clone(), item.item_index), pos))
            .collect();
        Ok(SyntheticRespondent { config, chol, item_of })
    }

    /// The persona's latent trait vector, drawn once per persona.
    pub fn latent(&self, persona_id: &str) -> DVector<f64> {
        let mut rng = seeded_rng(self.config.seed, &["latent", persona_id]);
        let z = DVector::from_fn(self.config.n_factors(), |_, _| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        &self.chol * z
    }

    /// The discretized item response for (persona, item).
    pub fn value_for(
        &self,
        persona_id: &str,
        instrument_id: &str,
        item_index: u32,
    ) -> Option<i32> {
        let &pos = self.item_of.get(&(instrument_id.to_string(), item_index))?;
        let item = &self.config.items[pos];
        let latent = self.latent(persona_id);
        let mut rng = seeded_rng(
            self.config.seed,
            &["residual", persona_id, instrument_id, &item_index.to_string()],
        );
        let noise: f64 = rng.sample(rand_distr::StandardNormal);
        let loading = if item.reverse_keyed { -item.loading } else { item.loading };
        let y = loading * latent[item.factor] + item.residual_sd * noise;
        let value = 1 + self.config.thresholds.iter().filter(|&&t| y > t).count() as i32;
        Some(value)
    }

    fn wording(&self, job: &PromptJob, value: i32) -> String {
        let mut rng = seeded_rng(
            self.config.seed,
            &["wording", &job.persona_id, &job.instrument_id, &job.item_index.to_string()],
        );
        match self.config.wording_mode {
            WordingMode::BareDigit => value.to_string(),
            WordingMode::EmbeddedDigit => {
                let phrases = [
                    format!("I would say {value}."),
                    format!("My answer is {value}."),
                    format!("For this statement I choose {value}."),
                ];
                phrases[rng.gen_range(0..phrases.len())].clone()
            }
            WordingMode::NoDigitFraction(p) => {
                if rng.gen::<f64>() < p {
                    let refusals =
                        ["I prefer not to answer.", "That statement does not apply to me."];
                    refusals[rng.gen_range(0..refusals.len())].to_string()
                } else {
                    value.to_string()
                }
            }
        }
    }
}

impl Respondent for SyntheticRespondent {
    fn kind(&self) -> RespondentKind {
        RespondentKind::Synthetic
    }

    fn respond(&self, job: &PromptJob) -> Result<String, RespondError> {
        match self.value_for(&job.persona_id, &job.instrument_id, job.item_index) {
            Some(value) => Ok(self.wording(job, value)),
            None => Err(RespondError {
                reason: format!(
                    "unknown-item: {} #{} is not in the generating model",
                    job.instrument_id, job.item_index
                ),
                retryable: false,
            }),
        }
    }
}
