//! Trait bias: per-persona absolute difference between a model-derived trait
//! score and the matched human's ground-truth score, plus its correlates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::correlation::pearson_pairwise;
use super::welch::{welch_t_test, WelchError, WelchResult};
use crate::scales::ScoreTable;

#[derive(Debug, Error)]
pub enum BiasError {
    #[error("tables are not aligned: {0}")]
    AlignmentMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitSummary {
    pub trait_name: String,
    /// Absent when no persona has a defined bias for this trait.
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitBias {
    pub persona_ids: Vec<String>,
    pub traits: Vec<String>,
    /// `cells[persona][trait]` = |llm - human|, missing where either side is.
    pub cells: Vec<Vec<Option<f64>>>,
    pub per_trait: Vec<TraitSummary>,
    /// Average bias across traits, per persona.
    pub per_persona_avg: Vec<Option<f64>>,
    /// Absent when no persona has any defined bias cell.
    pub grand_mean: Option<f64>,
    pub grand_sd: Option<f64>,
}

fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(sd))
}

/// Computes |llm - human| per persona and trait. Both tables must cover the
/// same personas and traits; rows are aligned by persona id, columns by name.
pub fn trait_bias(human: &ScoreTable, llm: &ScoreTable) -> Result<TraitBias, BiasError> {
    if human.columns != llm.columns {
        return Err(BiasError::AlignmentMismatch(format!(
            "trait columns differ: {:?} vs {:?}",
            human.columns, llm.columns
        )));
    }
    let mut human_sorted = human.persona_ids.clone();
    let mut llm_sorted = llm.persona_ids.clone();
    human_sorted.sort();
    llm_sorted.sort();
    if human_sorted != llm_sorted {
        return Err(BiasError::AlignmentMismatch(format!(
            "persona sets differ ({} vs {} personas)",
            human.persona_ids.len(),
            llm.persona_ids.len()
        )));
    }

    let traits = human.columns.clone();
    let persona_ids = human.persona_ids.clone();
    let mut cells = Vec::with_capacity(persona_ids.len());
    for (row_idx, persona) in persona_ids.iter().enumerate() {
        let llm_row = llm
            .persona_ids
            .iter()
            .position(|p| p == persona)
            .expect("persona sets verified equal");
        let row: Vec<Option<f64>> = (0..traits.len())
            .map(|c| match (human.values[row_idx][c], llm.values[llm_row][c]) {
                (Some(h), Some(l)) => Some((h - l).abs()),
                _ => None,
            })
            .collect();
        cells.push(row);
    }

    let per_trait: Vec<TraitSummary> = traits
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let values: Vec<f64> = cells.iter().filter_map(|row| row[c]).collect();
            let (mean, sd) = mean_sd(&values);
            TraitSummary { trait_name: name.clone(), mean, sd, n: values.len() }
        })
        .collect();

    let per_persona_avg: Vec<Option<f64>> = cells
        .iter()
        .map(|row| {
            let present: Vec<f64> = row.iter().flatten().copied().collect();
            if present.is_empty() {
                None
            } else {
                Some(present.iter().sum::<f64>() / present.len() as f64)
            }
        })
        .collect();
    let grand_values: Vec<f64> = per_persona_avg.iter().flatten().copied().collect();
    let (grand_mean, grand_sd) = mean_sd(&grand_values);

    Ok(TraitBias {
        persona_ids,
        traits,
        cells,
        per_trait,
        per_persona_avg,
        grand_mean,
        grand_sd,
    })
}

/// Renders a grand summary the way reports print it: "M=.63 (SD=.25)".
pub fn format_bias_summary(mean: Option<f64>, sd: Option<f64>) -> String {
    fn two_dec_no_leading_zero(v: Option<f64>) -> String {
        match v {
            Some(v) => {
                let s = format!("{v:.2}");
                s.strip_prefix('0').map(str::to_string).unwrap_or(s)
            }
            None => "--".into(),
        }
    }
    format!("M={} (SD={})", two_dec_no_leading_zero(mean), two_dec_no_leading_zero(sd))
}

/// Welch outcome per trait; degenerate samples carry their error instead.
pub type TraitWelchResults = Vec<(String, Result<WelchResult, WelchError>)>;

/// Per-trait Welch comparison of two bias tables (e.g. two models on the same
/// personas).
pub fn compare_trait_bias(a: &TraitBias, b: &TraitBias) -> Result<TraitWelchResults, BiasError> {
    if a.traits != b.traits {
        return Err(BiasError::AlignmentMismatch("trait sets differ".into()));
    }
    Ok(a
        .traits
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let sample_a: Vec<f64> = a.cells.iter().filter_map(|row| row[c]).collect();
            let sample_b: Vec<f64> = b.cells.iter().filter_map(|row| row[c]).collect();
            (name.clone(), welch_t_test(&sample_a, &sample_b))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlate {
    pub name: String,
    /// `None` when the covariate is constant or has too few pairs; flagged,
    /// never reported as zero.
    pub r: Option<f64>,
    pub n: usize,
    pub undefined_reason: Option<String>,
}

/// Correlates the per-persona average bias with covariate columns (encoded
/// demographics and human trait scores).
pub fn bias_correlates(
    bias: &TraitBias,
    covariates: &ScoreTable,
) -> Result<Vec<Correlate>, BiasError> {
    let mut order = Vec::with_capacity(bias.persona_ids.len());
    for persona in &bias.persona_ids {
        match covariates.persona_ids.iter().position(|p| p == persona) {
            Some(idx) => order.push(idx),
            None => {
                return Err(BiasError::AlignmentMismatch(format!(
                    "persona '{persona}' missing from covariates"
                )))
            }
        }
    }
    let bias_column: Vec<Option<f64>> = bias.per_persona_avg.clone();
    Ok(covariates
        .columns
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let column: Vec<Option<f64>> =
                order.iter().map(|&row| covariates.values[row][c]).collect();
            let (r, n) = pearson_pairwise(&bias_column, &column);
            let undefined_reason = if r.is_none() {
                let present: Vec<f64> = column.iter().flatten().copied().collect();
                let constant = present
                    .windows(2)
                    .all(|w| (w[0] - w[1]).abs() < f64::EPSILON)
                    && !present.is_empty();
                Some(if n < super::correlation::MIN_PAIRS {
                    format!("only {n} complete pairs")
                } else if constant {
                    "covariate is constant".to_string()
                } else {
                    "correlation undefined".to_string()
                })
            } else {
                None
            };
            Correlate { name: name.clone(), r, n, undefined_reason }
        })
        .collect())
}
