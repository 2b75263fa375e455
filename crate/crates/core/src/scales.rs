//! Questionnaire definitions and subscale scoring.
//!
//! An [`Instrument`] is loaded from a JSON definition file (see
//! `data/instruments/` for the bundled set) and validated as a whole:
//! validation collects every violation instead of stopping at the first.
//! Scores are item means on the native response scale, never sums.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Inclusive response bounds of a Likert scale, e.g. 1..=5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRange {
    pub low: i32,
    pub high: i32,
}

impl ResponseRange {
    pub fn contains(&self, value: i32) -> bool {
        self.low <= value && value <= self.high
    }

    pub fn points(&self) -> usize {
        (self.high - self.low + 1) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subscale {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub index: u32,
    pub statement: String,
    pub subscale: String,
    #[serde(default)]
    pub reverse_keyed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instrument {
    pub id: String,
    pub title: String,
    pub response_range: ResponseRange,
    pub anchors: Vec<String>,
    pub subscales: Vec<Subscale>,
    pub items: Vec<Item>,
}

/// A single violation found while validating an instrument definition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    RangeInvalid { low: i32, high: i32 },
    AnchorCountMismatch { expected: usize, got: usize },
    EmptyAnchor { position: usize },
    NoSubscales,
    DuplicateSubscaleId { id: String },
    NoItems,
    DuplicateItemIndex { index: u32 },
    NonContiguousIndices { expected: u32, got: u32 },
    EmptyStatement { index: u32 },
    UnknownSubscale { item_index: u32, subscale: String },
    EmptySubscale { id: String, n_items: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::RangeInvalid { low, high } => {
                write!(f, "response range low {low} must be below high {high}")
            }
            Violation::AnchorCountMismatch { expected, got } => {
                write!(f, "expected {expected} anchors for the response range, got {got}")
            }
            Violation::EmptyAnchor { position } => write!(f, "anchor {position} is empty"),
            Violation::NoSubscales => write!(f, "instrument defines no subscales"),
            Violation::DuplicateSubscaleId { id } => write!(f, "duplicate subscale id '{id}'"),
            Violation::NoItems => write!(f, "instrument defines no items"),
            Violation::DuplicateItemIndex { index } => write!(f, "duplicate item index {index}"),
            Violation::NonContiguousIndices { expected, got } => {
                write!(f, "item indices must be contiguous from 1: expected {expected}, got {got}")
            }
            Violation::EmptyStatement { index } => write!(f, "item {index} has an empty statement"),
            Violation::UnknownSubscale { item_index, subscale } => {
                write!(f, "item {item_index} references unknown subscale '{subscale}'")
            }
            Violation::EmptySubscale { id, n_items } => {
                write!(f, "subscale '{id}' has {n_items} items, needs at least 2")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum ScaleError {
    #[error("cannot read instrument file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed instrument file: {0}")]
    MalformedFile(#[from] serde_json::Error),
    #[error("invalid instrument '{id}': {}", summarize(.violations))]
    Invalid { id: String, violations: Vec<Violation> },
    #[error("value {value} outside response range [{low}, {high}]")]
    OutOfRange { value: i32, low: i32, high: i32 },
    #[error("unknown subscale '{0}'")]
    UnknownSubscale(String),
}

fn summarize(violations: &[Violation]) -> String {
    violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

/// Loads and validates one instrument definition.
pub fn load_instrument(path: &Path) -> Result<Instrument, ScaleError> {
    let text = std::fs::read_to_string(path)?;
    parse_instrument(&text)
}

/// Parses and validates an instrument definition from JSON text.
pub fn parse_instrument(text: &str) -> Result<Instrument, ScaleError> {
    let instrument: Instrument = serde_json::from_str(text)?;
    let violations = validate_instrument(&instrument);
    if violations.is_empty() {
        Ok(instrument)
    } else {
        Err(ScaleError::Invalid { id: instrument.id, violations })
    }
}

/// Checks every structural invariant and returns all violations found.
pub fn validate_instrument(instrument: &Instrument) -> Vec<Violation> {
    let mut violations = Vec::new();
    let range = instrument.response_range;
    if range.low >= range.high {
        violations.push(Violation::RangeInvalid { low: range.low, high: range.high });
    } else if instrument.anchors.len() != range.points() {
        violations.push(Violation::AnchorCountMismatch {
            expected: range.points(),
            got: instrument.anchors.len(),
        });
    }
    for (i, anchor) in instrument.anchors.iter().enumerate() {
        if anchor.trim().is_empty() {
            violations.push(Violation::EmptyAnchor { position: i + 1 });
        }
    }

    if instrument.subscales.is_empty() {
        violations.push(Violation::NoSubscales);
    }
    let mut subscale_ids = BTreeSet::new();
    for sub in &instrument.subscales {
        if !subscale_ids.insert(sub.id.as_str()) {
            violations.push(Violation::DuplicateSubscaleId { id: sub.id.clone() });
        }
    }

    if instrument.items.is_empty() {
        violations.push(Violation::NoItems);
    }
    let mut seen = BTreeSet::new();
    for (pos, item) in instrument.items.iter().enumerate() {
        if !seen.insert(item.index) {
            violations.push(Violation::DuplicateItemIndex { index: item.index });
        }
        let expected = pos as u32 + 1;
        if item.index != expected {
            violations.push(Violation::NonContiguousIndices { expected, got: item.index });
        }
        if item.statement.trim().is_empty() {
            violations.push(Violation::EmptyStatement { index: item.index });
        }
        if !subscale_ids.contains(item.subscale.as_str()) {
            violations.push(Violation::UnknownSubscale {
                item_index: item.index,
                subscale: item.subscale.clone(),
            });
        }
    }
    for sub in &instrument.subscales {
        let n = instrument.items.iter().filter(|i| i.subscale == sub.id).count();
        if n < 2 {
            violations.push(Violation::EmptySubscale { id: sub.id.clone(), n_items: n });
        }
    }
    violations
}

/// The four instruments shipped with the crate: BFI, PANAS, SSCS, BPAQ.
pub fn builtin_instruments() -> Vec<Instrument> {
    [
        include_str!("../data/instruments/bfi.json"),
        include_str!("../data/instruments/panas.json"),
        include_str!("../data/instruments/sscs.json"),
        include_str!("../data/instruments/bpaq.json"),
    ]
    .iter()
    .map(|text| parse_instrument(text).expect("bundled instrument must be valid"))
    .collect()
}

/// Loads every `*.json` instrument from a directory, sorted by file name.
pub fn load_instrument_dir(dir: &Path) -> Result<Vec<Instrument>, ScaleError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_instrument(p)).collect()
}

impl Instrument {
    pub fn item(&self, index: u32) -> Option<&Item> {
        self.items.iter().find(|i| i.index == index)
    }

    pub fn subscale(&self, id: &str) -> Option<&Subscale> {
        self.subscales.iter().find(|s| s.id == id)
    }

    pub fn subscale_items(&self, subscale_id: &str) -> Vec<&Item> {
        self.items.iter().filter(|i| i.subscale == subscale_id).collect()
    }
}

/// Maps a raw response onto the reversed scale: low + high - value.
pub fn reverse_key(value: i32, range: ResponseRange) -> Result<i32, ScaleError> {
    if !range.contains(value) {
        return Err(ScaleError::OutOfRange { value, low: range.low, high: range.high });
    }
    Ok(range.low + range.high - value)
}

/// Applies the item's key: reverse-keyed items are flipped, others pass through.
pub fn keyed_value(item: &Item, value: i32, range: ResponseRange) -> Result<i32, ScaleError> {
    if item.reverse_keyed {
        reverse_key(value, range)
    } else if range.contains(value) {
        Ok(value)
    } else {
        Err(ScaleError::OutOfRange { value, low: range.low, high: range.high })
    }
}

/// Missing-data policy for subscale scoring. The default requires every item
/// of the subscale to be present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissingPolicy {
    /// Minimum fraction of subscale items that must be present for the score
    /// to be defined.
    pub min_fraction: f64,
}

impl Default for MissingPolicy {
    fn default() -> Self {
        MissingPolicy { min_fraction: 1.0 }
    }
}

/// One persona's score on one subscale. `score` is `None` when too few items
/// were present under the policy; it is never silently zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubscaleScore {
    pub persona_id: String,
    pub instrument_id: String,
    pub subscale_id: String,
    pub score: Option<f64>,
    pub n_items_used: usize,
    pub n_missing: usize,
}

/// Scores one subscale for one persona as the mean of keyed item values.
///
/// `row` maps item index to the raw (unkeyed) response; absent or `None`
/// entries count as missing.
pub fn score_subscale(
    persona_id: &str,
    instrument: &Instrument,
    subscale_id: &str,
    row: &BTreeMap<u32, Option<i32>>,
    policy: MissingPolicy,
) -> Result<SubscaleScore, ScaleError> {
    let items = instrument.subscale_items(subscale_id);
    if items.is_empty() {
        return Err(ScaleError::UnknownSubscale(subscale_id.to_string()));
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for item in &items {
        if let Some(raw) = row.get(&item.index).copied().flatten() {
            sum += keyed_value(item, raw, instrument.response_range)? as f64;
            used += 1;
        }
    }
    let n_missing = items.len() - used;
    let present_fraction = used as f64 / items.len() as f64;
    let score = if used > 0 && present_fraction >= policy.min_fraction {
        Some(sum / used as f64)
    } else {
        None
    };
    Ok(SubscaleScore {
        persona_id: persona_id.to_string(),
        instrument_id: instrument.id.clone(),
        subscale_id: subscale_id.to_string(),
        score,
        n_items_used: used,
        n_missing,
    })
}

/// Personas x columns table of subscale scores (or any aligned per-persona
/// numeric columns). Cells are `None` where a score is missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub persona_ids: Vec<String>,
    pub columns: Vec<String>,
    /// Row-major: `values[persona][column]`.
    pub values: Vec<Vec<Option<f64>>>,
}

impl ScoreTable {
    pub fn new(persona_ids: Vec<String>, columns: Vec<String>) -> Self {
        let values = vec![vec![None; columns.len()]; persona_ids.len()];
        ScoreTable { persona_ids, columns, values }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, idx: usize) -> Vec<Option<f64>> {
        self.values.iter().map(|row| row[idx]).collect()
    }

    /// Builds a table from a flat list of subscale scores, one column per
    /// `instrument.subscale` pair, personas in first-appearance order.
    pub fn from_scores(scores: &[SubscaleScore]) -> Self {
        let mut persona_ids = Vec::new();
        let mut columns = Vec::new();
        for s in scores {
            let col = format!("{}.{}", s.instrument_id, s.subscale_id);
            if !persona_ids.contains(&s.persona_id) {
                persona_ids.push(s.persona_id.clone());
            }
            if !columns.contains(&col) {
                columns.push(col);
            }
        }
        let mut table = ScoreTable::new(persona_ids, columns);
        for s in scores {
            let col = format!("{}.{}", s.instrument_id, s.subscale_id);
            let r = table.persona_ids.iter().position(|p| *p == s.persona_id).unwrap();
            let c = table.column_index(&col).unwrap();
            table.values[r][c] = s.score;
        }
        table
    }
}
