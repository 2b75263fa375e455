//! First-digit response extraction and response-matrix assembly.
//!
//! The extraction rule is deliberately literal: scan the completion left to
//! right and take the first decimal digit, wherever it sits. Digits outside
//! the instrument's range become missing rather than clamped. The
//! first-token classification (is the first whitespace-delimited token a
//! digit?) is computed independently of extraction so response styles can be
//! compared.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::RawResponse;
use crate::prompt::PromptJob;
use crate::scales::ResponseRange;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Disposition {
    Parsed,
    NoDigit,
    OutOfRange,
    FailedJob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub job_id: String,
    pub value: Option<i32>,
    pub first_token_is_digit: bool,
    pub first_digit_position: Option<usize>,
    pub disposition: Disposition,
}

/// Parsing options. `strict` additionally requires the accepted digit to be
/// in range and not adjacent to another digit; it is off by default because
/// the plain first-digit rule is the documented behaviour.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    pub strict: bool,
}

/// Applies the first-digit rule to a verbatim completion. Total: every input
/// maps to a disposition, never an error.
pub fn parse_response(text: &str, range: ResponseRange) -> ParsedResponse {
    parse_response_with(text, range, ParseOptions::default())
}

pub fn parse_response_with(
    text: &str,
    range: ResponseRange,
    options: ParseOptions,
) -> ParsedResponse {
    let first_token_is_digit =
        text.trim_start().chars().next().is_some_and(|c| c.is_ascii_digit());

    let chars: Vec<char> = text.chars().collect();
    let candidate = if options.strict {
        chars.iter().enumerate().position(|(i, c)| {
            c.is_ascii_digit()
                && range.contains(c.to_digit(10).unwrap() as i32)
                && !(i > 0 && chars[i - 1].is_ascii_digit())
                && !(i + 1 < chars.len() && chars[i + 1].is_ascii_digit())
        })
    } else {
        chars.iter().position(|c| c.is_ascii_digit())
    };

    match candidate {
        None => ParsedResponse {
            job_id: String::new(),
            value: None,
            first_token_is_digit,
            first_digit_position: None,
            disposition: Disposition::NoDigit,
        },
        Some(pos) => {
            let digit = chars[pos].to_digit(10).unwrap() as i32;
            if range.contains(digit) {
                ParsedResponse {
                    job_id: String::new(),
                    value: Some(digit),
                    first_token_is_digit,
                    first_digit_position: Some(pos),
                    disposition: Disposition::Parsed,
                }
            } else {
                ParsedResponse {
                    job_id: String::new(),
                    value: None,
                    first_token_is_digit,
                    first_digit_position: Some(pos),
                    disposition: Disposition::OutOfRange,
                }
            }
        }
    }
}

/// Parses a raw response, carrying failure records through as `FailedJob`.
pub fn parse_raw(
    raw: &RawResponse,
    range: ResponseRange,
    options: ParseOptions,
) -> ParsedResponse {
    if raw.failure_reason.is_some() {
        return ParsedResponse {
            job_id: raw.job_id.clone(),
            value: None,
            first_token_is_digit: false,
            first_digit_position: None,
            disposition: Disposition::FailedJob,
        };
    }
    let mut parsed = parse_response_with(&raw.text, range, options);
    parsed.job_id = raw.job_id.clone();
    parsed
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispositionCounts {
    pub parsed: usize,
    pub no_digit: usize,
    pub out_of_range: usize,
    pub failed_job: usize,
}

impl DispositionCounts {
    pub fn total(&self) -> usize {
        self.parsed + self.no_digit + self.out_of_range + self.failed_job
    }

    pub fn add(&mut self, disposition: Disposition) {
        match disposition {
            Disposition::Parsed => self.parsed += 1,
            Disposition::NoDigit => self.no_digit += 1,
            Disposition::OutOfRange => self.out_of_range += 1,
            Disposition::FailedJob => self.failed_job += 1,
        }
    }
}

/// Column identity in a response matrix: one item of one instrument.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemRef {
    pub instrument_id: String,
    pub item_index: u32,
}

impl ItemRef {
    pub fn label(&self) -> String {
        format!("{}_{}", self.instrument_id, self.item_index)
    }
}

/// Personas x items integer matrix with missing cells, the input to every
/// statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseMatrix {
    pub persona_ids: Vec<String>,
    pub items: Vec<ItemRef>,
    /// Row-major: `cells[persona][item]`.
    pub cells: Vec<Vec<Option<i32>>>,
    pub provenance: String,
    pub dispositions: DispositionCounts,
}

impl ResponseMatrix {
    pub fn column(&self, idx: usize) -> Vec<Option<i32>> {
        self.cells.iter().map(|row| row[idx]).collect()
    }

    pub fn missing_cells(&self) -> usize {
        self.cells.iter().flatten().filter(|c| c.is_none()).count()
    }
}

#[derive(Debug, Error)]
pub enum ParserError {
    #[error("job mismatch: {0}")]
    JobMismatch(String),
    #[error("frequency input is empty")]
    EmptyInput,
}

/// Builds a personas x items matrix from parsed responses, one cell per batch
/// job. The batch must target a single model configuration: separate models
/// are separate matrices.
pub fn build_response_matrix(
    parsed: &[ParsedResponse],
    batch: &[PromptJob],
    provenance: &str,
) -> Result<ResponseMatrix, ParserError> {
    let mut configs: Vec<&crate::prompt::ModelConfig> =
        batch.iter().map(|j| &j.model_config).collect();
    configs.dedup();
    if configs.len() > 1 {
        return Err(ParserError::JobMismatch(
            "batch spans multiple model configs; build one matrix per model".into(),
        ));
    }

    let mut by_id: BTreeMap<&str, &ParsedResponse> = BTreeMap::new();
    for p in parsed {
        if by_id.insert(p.job_id.as_str(), p).is_some() {
            return Err(ParserError::JobMismatch(format!(
                "duplicate job_id '{}' in parsed input",
                p.job_id
            )));
        }
    }
    let batch_ids: BTreeSet<&str> = batch.iter().map(|j| j.job_id.as_str()).collect();
    let missing: Vec<&str> =
        batch_ids.iter().filter(|id| !by_id.contains_key(**id)).copied().collect();
    if !missing.is_empty() {
        return Err(ParserError::JobMismatch(format!(
            "{} batch jobs have no parsed response (first: {})",
            missing.len(),
            missing[0]
        )));
    }
    let extras = by_id.keys().filter(|id| !batch_ids.contains(**id)).count();
    if extras > 0 {
        return Err(ParserError::JobMismatch(format!(
            "{extras} parsed responses do not belong to the batch"
        )));
    }

    let mut persona_ids = Vec::new();
    let mut items = Vec::new();
    for job in batch {
        if !persona_ids.contains(&job.persona_id) {
            persona_ids.push(job.persona_id.clone());
        }
        let item = ItemRef { instrument_id: job.instrument_id.clone(), item_index: job.item_index };
        if !items.contains(&item) {
            items.push(item);
        }
    }
    let row_of: BTreeMap<&str, usize> =
        persona_ids.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
    let col_of: BTreeMap<(&str, u32), usize> = items
        .iter()
        .enumerate()
        .map(|(i, item)| ((item.instrument_id.as_str(), item.item_index), i))
        .collect();

    let mut cells = vec![vec![None; items.len()]; persona_ids.len()];
    let mut dispositions = DispositionCounts::default();
    for job in batch {
        let p = by_id[job.job_id.as_str()];
        dispositions.add(p.disposition);
        let r = row_of[job.persona_id.as_str()];
        let c = col_of[&(job.instrument_id.as_str(), job.item_index)];
        if cells[r][c].is_some() {
            return Err(ParserError::JobMismatch(format!(
                "two jobs map to the same cell ({}, {})",
                job.persona_id, job.item_index
            )));
        }
        cells[r][c] = p.value;
    }

    Ok(ResponseMatrix {
        persona_ids,
        items,
        cells,
        provenance: provenance.to_string(),
        dispositions,
    })
}

/// Grouping key for frequency tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrequencyGroupBy {
    Item,
    Subscale,
}

/// One observation for frequency tabulation.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyEntry {
    pub item: ItemRef,
    pub subscale_id: String,
    pub value: Option<i32>,
    pub first_token_is_digit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub group: String,
    /// `None` in unsplit tables; `Some(is_digit)` when split by first token.
    pub first_token_is_digit: Option<bool>,
    pub value: i32,
    pub count: usize,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub rows: Vec<FrequencyRow>,
}

/// Relative frequencies of present responses per group (and optionally per
/// first-token class). Frequencies within each group sum to 1.
pub fn frequency_table(
    entries: &[FrequencyEntry],
    range: ResponseRange,
    group_by: FrequencyGroupBy,
    split_by_first_token: bool,
) -> Result<FrequencyTable, ParserError> {
    if entries.is_empty() {
        return Err(ParserError::EmptyInput);
    }
    let mut counts: BTreeMap<(String, Option<bool>), BTreeMap<i32, usize>> = BTreeMap::new();
    for entry in entries {
        let Some(value) = entry.value else { continue };
        let group = match group_by {
            FrequencyGroupBy::Item => entry.item.label(),
            FrequencyGroupBy::Subscale => {
                format!("{}.{}", entry.item.instrument_id, entry.subscale_id)
            }
        };
        let split = split_by_first_token.then_some(entry.first_token_is_digit);
        *counts.entry((group, split)).or_default().entry(value).or_default() += 1;
    }
    let mut rows = Vec::new();
    for ((group, split), by_value) in counts {
        let total: usize = by_value.values().sum();
        for value in range.low..=range.high {
            let count = by_value.get(&value).copied().unwrap_or(0);
            rows.push(FrequencyRow {
                group: group.clone(),
                first_token_is_digit: split,
                value,
                count,
                frequency: count as f64 / total as f64,
            });
        }
    }
    Ok(FrequencyTable { rows })
}
