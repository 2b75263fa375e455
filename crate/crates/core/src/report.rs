//! Analysis report: every statistic of the battery over one response matrix,
//! as a serializable structure plus a plain-text rendering.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parser::{
    frequency_table, FrequencyEntry, FrequencyGroupBy, FrequencyTable, ResponseMatrix,
};
use crate::scales::{keyed_value, Instrument, MissingPolicy, ScoreTable, SubscaleScore};
use crate::stats::bias::{
    bias_correlates, compare_trait_bias, format_bias_summary, trait_bias, Correlate, TraitBias,
};
use crate::stats::cfa::{fit_cfa, CfaOptions, CfaResult, CfaSpec, ExcludedItem};
use crate::stats::correlation::{correlation_matrix, CorrelationMatrix};
use crate::stats::covariance::{covariance_matrix, CovarianceError, MissingHandling};
use crate::stats::fit_indices::{fit_indices, format_index, FitIndices};
use crate::stats::glb::greatest_lower_bound;
use crate::stats::reliability::{cronbach_alpha, mcdonald_omega};
use crate::stats::sandwich::robust_standard_errors;

/// Reliability threshold used throughout the report.
pub const RELIABILITY_THRESHOLD: f64 = 0.70;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRow {
    pub instrument_id: String,
    pub subscale_id: String,
    pub alpha: Option<f64>,
    pub omega: Option<f64>,
    pub glb: Option<f64>,
    pub n_personas: usize,
    pub items_used: usize,
    /// True when alpha falls below [`RELIABILITY_THRESHOLD`].
    pub below_threshold: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustSeReport {
    pub labels: Vec<String>,
    pub robust: Vec<f64>,
    pub naive: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfaSection {
    pub instrument_id: String,
    pub excluded_items: Vec<ExcludedItem>,
    pub result: Option<CfaResult>,
    pub fit: Option<FitIndices>,
    pub robust_se: Option<RobustSeReport>,
    /// Present when the model could not be estimated at all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitComparison {
    pub trait_name: String,
    pub t: Option<f64>,
    pub df: Option<f64>,
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitBiasSection {
    pub bias: TraitBias,
    /// "M=.63 (SD=.25)" style rendering of the grand summary.
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Vec<TraitComparison>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencySection {
    pub by_item: FrequencyTable,
    pub by_subscale: FrequencyTable,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_by_first_token: Option<FrequencyTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub run_id: String,
    pub missing_policy: String,
    pub n_personas: usize,
    pub reliability: Vec<ReliabilityRow>,
    pub score_correlations: CorrelationMatrix,
    pub intercorrelations: Option<CorrelationMatrix>,
    pub criterion_validity: Option<CorrelationMatrix>,
    pub frequencies: Option<FrequencySection>,
    pub cfa: Vec<CfaSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trait_bias: Option<TraitBiasSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_correlates: Option<Vec<Correlate>>,
}

#[derive(Debug, Error)]
pub enum AnalyzeError {
    #[error("matrix references instrument '{0}' but no definition was provided")]
    UnknownInstrument(String),
    #[error("covariance failed for {context}: {source}")]
    Covariance { context: String, source: CovarianceError },
    #[error("scoring failed: {0}")]
    Scoring(#[from] crate::scales::ScaleError),
    #[error("trait bias failed: {0}")]
    Bias(#[from] crate::stats::bias::BiasError),
}

#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    pub missing: MissingHandling,
    pub scoring_policy: MissingPolicy,
    pub cfa: CfaOptions,
    /// Compute sandwich standard errors for instrument CFAs (needs complete
    /// rows; skipped per instrument when unavailable).
    pub robust_se: bool,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            missing: MissingHandling::Listwise,
            scoring_policy: MissingPolicy::default(),
            cfa: CfaOptions::default(),
            robust_se: true,
        }
    }
}

/// Scores every (persona, subscale) pair of the matrix.
pub fn score_matrix(
    matrix: &ResponseMatrix,
    instruments: &[Instrument],
    policy: MissingPolicy,
) -> Result<Vec<SubscaleScore>, AnalyzeError> {
    let mut scores = Vec::new();
    for instrument in instruments_in_matrix(matrix, instruments)? {
        let columns: Vec<(usize, u32)> = matrix
            .items
            .iter()
            .enumerate()
            .filter(|(_, item)| item.instrument_id == instrument.id)
            .map(|(idx, item)| (idx, item.item_index))
            .collect();
        for (row_idx, persona) in matrix.persona_ids.iter().enumerate() {
            let row: std::collections::BTreeMap<u32, Option<i32>> = columns
                .iter()
                .map(|(col, item_index)| (*item_index, matrix.cells[row_idx][*col]))
                .collect();
            for subscale in &instrument.subscales {
                scores.push(crate::scales::score_subscale(
                    persona,
                    instrument,
                    &subscale.id,
                    &row,
                    policy,
                )?);
            }
        }
    }
    Ok(scores)
}

fn instruments_in_matrix<'a>(
    matrix: &ResponseMatrix,
    instruments: &'a [Instrument],
) -> Result<Vec<&'a Instrument>, AnalyzeError> {
    let mut unique: Vec<&Instrument> = Vec::new();
    for item in &matrix.items {
        if !unique.iter().any(|i| i.id == item.instrument_id) {
            unique.push(
                instruments
                    .iter()
                    .find(|i| i.id == item.instrument_id)
                    .ok_or_else(|| AnalyzeError::UnknownInstrument(item.instrument_id.clone()))?,
            );
        }
    }
    Ok(unique)
}

/// Keyed item columns (reverse-keyed items flipped) for one instrument.
fn keyed_columns(
    matrix: &ResponseMatrix,
    instrument: &Instrument,
    item_filter: impl Fn(u32) -> bool,
) -> Vec<(String, Vec<Option<f64>>)> {
    matrix
        .items
        .iter()
        .enumerate()
        .filter(|(_, item)| item.instrument_id == instrument.id && item_filter(item.item_index))
        .map(|(col, item_ref)| {
            let item = instrument.item(item_ref.item_index).expect("item exists");
            let values: Vec<Option<f64>> = matrix
                .cells
                .iter()
                .map(|row| {
                    row[col].map(|raw| {
                        keyed_value(item, raw, instrument.response_range).unwrap_or(raw) as f64
                    })
                })
                .collect();
            (item_ref.label(), values)
        })
        .collect()
}

fn reliability_rows(
    matrix: &ResponseMatrix,
    instrument: &Instrument,
    options: &AnalyzeOptions,
) -> Vec<ReliabilityRow> {
    let mut rows = Vec::new();
    for subscale in &instrument.subscales {
        let item_indices: std::collections::BTreeSet<u32> = instrument
            .subscale_items(&subscale.id)
            .iter()
            .map(|i| i.index)
            .collect();
        let columns = keyed_columns(matrix, instrument, |idx| item_indices.contains(&idx));
        let mut notes = Vec::new();
        let mut row = ReliabilityRow {
            instrument_id: instrument.id.clone(),
            subscale_id: subscale.id.clone(),
            alpha: None,
            omega: None,
            glb: None,
            n_personas: 0,
            items_used: columns.len(),
            below_threshold: false,
            notes: Vec::new(),
        };
        match covariance_matrix(&columns, options.missing) {
            Ok(outcome) => {
                row.n_personas = outcome.matrix.n;
                if !outcome.zero_variance.is_empty() {
                    notes.push(format!(
                        "zero-variance items: {}",
                        outcome.zero_variance.join(", ")
                    ));
                }
                match cronbach_alpha(&outcome.matrix) {
                    Ok(alpha) => row.alpha = Some(alpha),
                    Err(e) => notes.push(format!("alpha: {e}")),
                }
                match greatest_lower_bound(&outcome.matrix) {
                    Ok(glb) => row.glb = Some(glb),
                    Err(e) => notes.push(format!("glb: {e}")),
                }
                match mcdonald_omega(&outcome.matrix, &options.cfa) {
                    Ok(omega) => row.omega = Some(omega),
                    Err(e) => notes.push(format!("omega: {e}")),
                }
            }
            Err(e) => notes.push(format!("covariance: {e}")),
        }
        row.below_threshold = row.alpha.is_some_and(|a| a < RELIABILITY_THRESHOLD);
        row.notes = notes;
        rows.push(row);
    }
    rows
}

fn cfa_section(
    matrix: &ResponseMatrix,
    instrument: &Instrument,
    options: &AnalyzeOptions,
) -> CfaSection {
    let all_columns = keyed_columns(matrix, instrument, |_| true);
    let mut section = CfaSection {
        instrument_id: instrument.id.clone(),
        excluded_items: Vec::new(),
        result: None,
        fit: None,
        robust_se: None,
        error: None,
    };
    let outcome = match covariance_matrix(&all_columns, MissingHandling::Listwise) {
        Ok(o) => o,
        Err(e) => {
            section.error = Some(format!("covariance: {e}"));
            return section;
        }
    };
    // Items with a uniform response column cannot enter the model.
    section.excluded_items = outcome
        .zero_variance
        .iter()
        .map(|label| ExcludedItem { label: label.clone(), reason: "uniform".into() })
        .collect();
    let excluded: std::collections::BTreeSet<&str> =
        outcome.zero_variance.iter().map(String::as_str).collect();

    let kept: Vec<usize> = outcome
        .matrix
        .labels
        .iter()
        .enumerate()
        .filter(|(_, l)| !excluded.contains(l.as_str()))
        .map(|(i, _)| i)
        .collect();
    let labels: Vec<String> = kept.iter().map(|&i| outcome.matrix.labels[i].clone()).collect();
    let values = nalgebra::DMatrix::from_fn(kept.len(), kept.len(), |r, c| {
        outcome.matrix.values[(kept[r], kept[c])]
    });
    let s = crate::stats::covariance::CovarianceMatrix {
        labels: labels.clone(),
        values,
        n: outcome.matrix.n,
    };

    let factor_names: Vec<String> =
        instrument.subscales.iter().map(|sub| sub.id.clone()).collect();
    let item_factor: Vec<usize> = labels
        .iter()
        .map(|label| {
            let index: u32 = label
                .rsplit('_')
                .next()
                .and_then(|s| s.parse().ok())
                .expect("label carries the item index");
            let item = instrument.item(index).expect("item exists");
            instrument
                .subscales
                .iter()
                .position(|sub| sub.id == item.subscale)
                .expect("subscale exists")
        })
        .collect();
    let spec = CfaSpec {
        factor_names,
        item_labels: labels,
        item_factor,
        excluded_items: section.excluded_items.clone(),
    };
    match fit_cfa(&s, &spec, &options.cfa) {
        Ok(result) => {
            if result.converged {
                match fit_indices(&result, &s) {
                    Ok(fit) => section.fit = Some(fit),
                    Err(e) => section.error = Some(format!("fit indices: {e}")),
                }
                if options.robust_se {
                    let keyed = keyed_columns(matrix, instrument, |idx| {
                        !excluded.contains(format!("{}_{}", instrument.id, idx).as_str())
                    });
                    let rows: Vec<Vec<f64>> = (0..matrix.persona_ids.len())
                        .filter_map(|r| {
                            keyed.iter().map(|(_, col)| col[r]).collect::<Option<Vec<f64>>>()
                        })
                        .collect();
                    match robust_standard_errors(&result, &rows) {
                        Ok(ses) => {
                            section.robust_se = Some(RobustSeReport {
                                labels: ses.labels,
                                robust: ses.robust,
                                naive: ses.naive,
                            })
                        }
                        Err(e) => {
                            log::warn!("robust SEs unavailable for {}: {e}", instrument.id)
                        }
                    }
                }
            }
            section.result = Some(result);
        }
        Err(e) => section.error = Some(e.to_string()),
    }
    section
}

/// Runs the whole battery over one response matrix.
///
/// `human_scores`, `covariates` and `compare_with` switch on the trait-bias
/// sections; `parsed_entries` (with first-token flags) switches on the
/// frequency tables.
pub fn analyze(
    matrix: &ResponseMatrix,
    instruments: &[Instrument],
    parsed_entries: Option<&[FrequencyEntry]>,
    human_scores: Option<&ScoreTable>,
    covariates: Option<&ScoreTable>,
    compare_with: Option<&ScoreTable>,
    options: &AnalyzeOptions,
) -> Result<AnalysisReport, AnalyzeError> {
    let used = instruments_in_matrix(matrix, instruments)?;
    let scores = score_matrix(matrix, instruments, options.scoring_policy)?;
    let score_table = ScoreTable::from_scores(&scores);

    let mut reliability = Vec::new();
    let mut cfa = Vec::new();
    for instrument in &used {
        reliability.extend(reliability_rows(matrix, instrument, options));
        cfa.push(cfa_section(matrix, instrument, options));
    }

    let score_columns: Vec<(String, Vec<Option<f64>>)> = score_table
        .columns
        .iter()
        .enumerate()
        .map(|(c, name)| (name.clone(), score_table.column(c)))
        .collect();
    let score_correlations = correlation_matrix(&score_columns);

    let trait_columns: Vec<(String, Vec<Option<f64>>)> = score_columns
        .iter()
        .filter(|(name, _)| name.starts_with("BFI."))
        .cloned()
        .collect();
    let intercorrelations =
        (!trait_columns.is_empty()).then(|| correlation_matrix(&trait_columns));
    let criterion_validity = if trait_columns.is_empty() {
        None
    } else {
        let criterion_columns: Vec<(String, Vec<Option<f64>>)> = score_columns
            .iter()
            .filter(|(name, _)| !name.starts_with("BFI."))
            .cloned()
            .collect();
        if criterion_columns.is_empty() {
            None
        } else {
            let mut all = trait_columns.clone();
            all.extend(criterion_columns);
            Some(correlation_matrix(&all))
        }
    };

    let frequencies = parsed_entries.and_then(|entries| {
        let range = used.first().map(|i| i.response_range)?;
        let by_item = frequency_table(entries, range, FrequencyGroupBy::Item, false).ok()?;
        let by_subscale =
            frequency_table(entries, range, FrequencyGroupBy::Subscale, false).ok()?;
        let split = frequency_table(entries, range, FrequencyGroupBy::Subscale, true).ok();
        Some(FrequencySection { by_item, by_subscale, split_by_first_token: split })
    });

    let trait_bias_section = match human_scores {
        Some(human) => {
            let traits: Vec<String> = human.columns.clone();
            let llm_trait_table = project_table(&score_table, &traits, &human.persona_ids);
            let bias = trait_bias(human, &llm_trait_table)?;
            let summary = format_bias_summary(bias.grand_mean, bias.grand_sd);
            let comparison = match compare_with {
                Some(other_llm) => {
                    let other_bias = trait_bias(
                        human,
                        &project_table(other_llm, &traits, &human.persona_ids),
                    )?;
                    let comparisons = compare_trait_bias(&bias, &other_bias)?;
                    Some(
                        comparisons
                            .into_iter()
                            .map(|(trait_name, result)| match result {
                                Ok(w) => TraitComparison {
                                    trait_name,
                                    t: Some(w.t),
                                    df: Some(w.df),
                                    p: Some(w.p),
                                    error: None,
                                },
                                Err(e) => TraitComparison {
                                    trait_name,
                                    t: None,
                                    df: None,
                                    p: None,
                                    error: Some(e.to_string()),
                                },
                            })
                            .collect(),
                    )
                }
                None => None,
            };
            Some(TraitBiasSection { bias, summary, comparison })
        }
        None => None,
    };

    let bias_correlates_section = match (&trait_bias_section, covariates) {
        (Some(section), Some(covariates)) => Some(bias_correlates(&section.bias, covariates)?),
        _ => None,
    };

    Ok(AnalysisReport {
        run_id: matrix.provenance.clone(),
        missing_policy: format!("{:?}", options.missing).to_lowercase(),
        n_personas: matrix.persona_ids.len(),
        reliability,
        score_correlations,
        intercorrelations,
        criterion_validity,
        frequencies,
        cfa,
        trait_bias: trait_bias_section,
        bias_correlates: bias_correlates_section,
    })
}

/// Restricts a score table to the given columns and persona order.
pub fn project_table(table: &ScoreTable, columns: &[String], personas: &[String]) -> ScoreTable {
    let col_idx: Vec<Option<usize>> = columns.iter().map(|c| table.column_index(c)).collect();
    let values = personas
        .iter()
        .map(|p| {
            let row = table.persona_ids.iter().position(|q| q == p);
            col_idx
                .iter()
                .map(|c| match (row, c) {
                    (Some(r), Some(c)) => table.values[r][*c],
                    _ => None,
                })
                .collect()
        })
        .collect();
    ScoreTable { persona_ids: personas.to_vec(), columns: columns.to_vec(), values }
}

fn fmt_opt(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.3}"),
        None => "--".into(),
    }
}

/// Human-readable summary: reliability with threshold flags, fit-index table,
/// CFA outcomes, trait bias in the paper's reporting form.
pub fn render_text(report: &AnalysisReport) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    writeln!(out, "run {}", report.run_id).unwrap();
    writeln!(out, "personas: {}; missing policy: {}", report.n_personas, report.missing_policy)
        .unwrap();
    writeln!(out).unwrap();

    writeln!(out, "Internal consistency (flag * = alpha below .70)").unwrap();
    writeln!(
        out,
        "{:<10} {:<12} {:>7} {:>7} {:>7} {:>6}  flag",
        "scale", "subscale", "alpha", "omega", "glb", "n"
    )
    .unwrap();
    for row in &report.reliability {
        writeln!(
            out,
            "{:<10} {:<12} {:>7} {:>7} {:>7} {:>6}  {}",
            row.instrument_id,
            row.subscale_id,
            fmt_opt(row.alpha),
            fmt_opt(row.omega),
            fmt_opt(row.glb),
            row.n_personas,
            if row.below_threshold { "*" } else { "" }
        )
        .unwrap();
        for note in &row.notes {
            writeln!(out, "{:<10} {:<12} note: {note}", "", "").unwrap();
        }
    }
    writeln!(out).unwrap();

    writeln!(out, "Confirmatory factor analysis fit").unwrap();
    writeln!(out, "{:<28} {:>5} {:>5} {:>6}", "Data source", "GFI", "IFI", "RMSEA").unwrap();
    for section in &report.cfa {
        let label = format!("{} ({})", section.instrument_id, report.run_id);
        match (&section.fit, &section.result) {
            (Some(fit), _) => {
                writeln!(
                    out,
                    "{:<28} {:>5} {:>5} {:>6}",
                    label,
                    format_index(fit.gfi),
                    format_index(fit.ifi),
                    format_index(fit.rmsea)
                )
                .unwrap();
            }
            (None, Some(result)) if !result.converged => {
                let reason = result
                    .failure
                    .as_ref()
                    .map(|f| f.to_string())
                    .unwrap_or_else(|| "estimation failed".into());
                writeln!(out, "{label:<28} estimation failed: {reason}").unwrap();
            }
            _ => {
                let reason = section.error.as_deref().unwrap_or("estimation failed");
                writeln!(out, "{label:<28} {reason}").unwrap();
            }
        }
        for excluded in &section.excluded_items {
            writeln!(out, "  excluded {} ({})", excluded.label, excluded.reason).unwrap();
        }
    }
    writeln!(out).unwrap();

    if let Some(section) = &report.trait_bias {
        writeln!(out, "Trait bias: {}", section.summary).unwrap();
        for t in &section.bias.per_trait {
            writeln!(out, "  {}: {}", t.trait_name, format_bias_summary(t.mean, t.sd)).unwrap();
        }
        if let Some(comparison) = &section.comparison {
            writeln!(out, "Model comparison (Welch):").unwrap();
            for c in comparison {
                match (c.t, c.df, c.p) {
                    (Some(t), Some(df), Some(p)) => {
                        writeln!(out, "  {}: t({df:.1}) = {t:.2}, p = {p:.3}", c.trait_name)
                            .unwrap()
                    }
                    _ => writeln!(
                        out,
                        "  {}: {}",
                        c.trait_name,
                        c.error.as_deref().unwrap_or("unavailable")
                    )
                    .unwrap(),
                }
            }
        }
        writeln!(out).unwrap();
    }

    if let Some(correlates) = &report.bias_correlates {
        writeln!(out, "Bias correlates (Pearson r with average trait bias)").unwrap();
        for c in correlates {
            match c.r {
                Some(r) => writeln!(out, "  {:<16} {r:>7.3} (n={})", c.name, c.n).unwrap(),
                None => writeln!(
                    out,
                    "  {:<16} undefined: {}",
                    c.name,
                    c.undefined_reason.as_deref().unwrap_or("unknown")
                )
                .unwrap(),
            }
        }
    }
    out
}
