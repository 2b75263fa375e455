//! Persona descriptions: free-text generic personas sampled from a corpus
//! file, and silicon personas rendered sentence-by-sentence from demographic
//! records.
//!
//! The sentence templates live in `data/persona_templates.json` as data, one
//! placeholder per pattern, so the variable set can be extended without a
//! rebuild. Rendering walks the template fields in file order and omits
//! fields the record does not populate. Ground-truth trait scores travel in a
//! separate field group and are never rendered.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PersonaKind {
    Generic,
    Silicon,
}

/// A persona description ready for prompt assembly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaText {
    pub persona_id: String,
    pub kind: PersonaKind,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_record: Option<SiliconRecord>,
}

/// Ground-truth Big Five scores carried alongside a silicon record for the
/// trait-bias evaluation. Excluded from rendering by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraitScores {
    pub bfi_e: f64,
    pub bfi_a: f64,
    pub bfi_c: f64,
    pub bfi_n: f64,
    pub bfi_o: f64,
}

impl TraitScores {
    pub fn as_pairs(&self) -> [(&'static str, f64); 5] {
        [
            ("bfi_e", self.bfi_e),
            ("bfi_a", self.bfi_a),
            ("bfi_c", self.bfi_c),
            ("bfi_n", self.bfi_n),
            ("bfi_o", self.bfi_o),
        ]
    }
}

/// One demographic record, keyed by the template variable names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiliconRecord {
    /// Demographic variable values, keyed by template field name. Absent keys
    /// are treated as unpopulated and omitted from rendering.
    pub values: BTreeMap<String, String>,
    pub traits: TraitScores,
}

impl SiliconRecord {
    /// Stable identifier derived from the record contents, so the same row
    /// keeps its id across runs and seeds.
    pub fn persona_id(&self) -> String {
        let mut hasher = Sha256::new();
        for (k, v) in &self.values {
            hasher.update(k.as_bytes());
            hasher.update([0x1f]);
            hasher.update(v.as_bytes());
            hasher.update([0x1e]);
        }
        for (k, v) in self.traits.as_pairs() {
            hasher.update(k.as_bytes());
            hasher.update([0x1f]);
            hasher.update(v.to_le_bytes());
            hasher.update([0x1e]);
        }
        format!("sil-{}", hex_prefix(&hasher.finalize(), 12))
    }
}

fn hex_prefix(bytes: &[u8], len: usize) -> String {
    let mut s = String::with_capacity(len);
    for b in bytes {
        use std::fmt::Write;
        write!(s, "{b:02x}").unwrap();
        if s.len() >= len {
            break;
        }
    }
    s.truncate(len);
    s
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    IntRange { min: i64, max: i64 },
    Choice { values: Vec<String> },
    /// Free-form value; the table's value list is open-ended.
    Open,
}

impl FieldKind {
    pub fn is_open(&self) -> bool {
        matches!(self, FieldKind::Open)
    }
}

/// One template row: a sentence pattern with a single `{}` placeholder plus
/// the validation rule and optional per-value surface text.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    pub template: String,
    #[serde(default)]
    pub value_text: BTreeMap<String, String>,
    #[serde(default)]
    pub requires_employment: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct TemplateSpec {
    pub employment_statuses: Vec<String>,
    pub fields: Vec<FieldSpec>,
}

impl TemplateSpec {
    /// The template bundle shipped with the crate.
    pub fn builtin() -> TemplateSpec {
        serde_json::from_str(include_str!("../data/persona_templates.json"))
            .expect("bundled persona templates must parse")
    }

    pub fn load(path: &Path) -> Result<TemplateSpec, PersonaError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// All column names a silicon record file must provide.
    pub fn required_columns(&self) -> Vec<&str> {
        self.fields.iter().map(|f| f.name.as_str()).collect()
    }
}

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("cannot read persona file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed persona file: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("malformed record file: {0}")]
    MalformedCsv(#[from] csv::Error),
    #[error("record file is missing columns: {0:?}")]
    SchemaMismatch(Vec<String>),
    #[error("field '{field}' has invalid value '{value}'")]
    InvalidFieldValue { field: String, value: String },
    #[error("persona {record} has {got} sentences, expected 4 or 5")]
    BadSentenceCount { record: usize, got: usize },
    #[error("requested {requested} personas but only {available} are available")]
    NotEnoughPersonas { requested: usize, available: usize },
    #[error("requested {requested} records but only {available} usable rows remain")]
    NotEnoughRows { requested: usize, available: usize },
}

impl FieldSpec {
    fn validate(&self, value: &str) -> Result<(), PersonaError> {
        let invalid = || PersonaError::InvalidFieldValue {
            field: self.name.clone(),
            value: value.to_string(),
        };
        match &self.kind {
            FieldKind::IntRange { min, max } => {
                let n: i64 = value.trim().parse().map_err(|_| invalid())?;
                if n < *min || n > *max {
                    return Err(invalid());
                }
            }
            FieldKind::Choice { values } => {
                if !values.iter().any(|v| v == value) {
                    return Err(invalid());
                }
            }
            FieldKind::Open => {
                if value.trim().is_empty() {
                    return Err(invalid());
                }
            }
        }
        Ok(())
    }

    fn surface_text<'a>(&'a self, value: &'a str) -> &'a str {
        self.value_text.get(value).map(String::as_str).unwrap_or(value)
    }

    fn sentence(&self, value: &str) -> String {
        self.template.replacen("{}", self.surface_text(value), 1)
    }
}

/// Renders a silicon record into first-person sentences, one per populated
/// field, in template order. Trait scores never reach the output.
pub fn render_silicon_persona(
    record: &SiliconRecord,
    spec: &TemplateSpec,
) -> Result<PersonaText, PersonaError> {
    let employed = record
        .values
        .get("occ_st")
        .is_some_and(|v| spec.employment_statuses.iter().any(|s| s == v));
    let mut sentences = Vec::new();
    for field in &spec.fields {
        let Some(value) = record.values.get(&field.name) else { continue };
        if value.trim().is_empty() {
            continue;
        }
        if field.requires_employment && !employed {
            continue;
        }
        field.validate(value)?;
        sentences.push(field.sentence(value));
    }
    Ok(PersonaText {
        persona_id: record.persona_id(),
        kind: PersonaKind::Silicon,
        text: sentences.join(" "),
        source_record: Some(record.clone()),
    })
}

/// Recovers `(field, value)` pairs from a rendered silicon persona by matching
/// each template instantiation against the text. Inverse of
/// [`render_silicon_persona`] for valid records.
pub fn extract_silicon_fields(
    text: &str,
    spec: &TemplateSpec,
) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for field in &spec.fields {
        match &field.kind {
            FieldKind::Choice { values } => {
                for value in values {
                    if contains_sentence(text, &field.sentence(value)) {
                        out.insert(field.name.clone(), value.clone());
                        break;
                    }
                }
            }
            FieldKind::IntRange { min, max } => {
                for n in *min..=*max {
                    if contains_sentence(text, &field.sentence(&n.to_string())) {
                        out.insert(field.name.clone(), n.to_string());
                        break;
                    }
                }
            }
            FieldKind::Open => {
                let (prefix, suffix) = match field.template.split_once("{}") {
                    Some(parts) => parts,
                    None => continue,
                };
                if let Some(start) = text.find(prefix) {
                    let rest = &text[start + prefix.len()..];
                    if let Some(end) = rest.find(suffix) {
                        out.insert(field.name.clone(), rest[..end].to_string());
                    }
                }
            }
        }
    }
    out
}

fn contains_sentence(text: &str, sentence: &str) -> bool {
    // Sentences are joined with spaces; require boundary alignment so "I have
    // 1 sibling." does not match inside "I have 11 siblings."
    let mut from = 0;
    while let Some(pos) = text[from..].find(sentence) {
        let start = from + pos;
        let end = start + sentence.len();
        let ok_before = start == 0 || text.as_bytes()[start - 1] == b' ';
        let ok_after = end == text.len() || text.as_bytes()[end] == b' ';
        if ok_before && ok_after {
            return true;
        }
        from = start + 1;
    }
    false
}

/// Reads a generic-persona corpus: records separated by blank lines, one
/// sentence per line, then draws a deterministic sample of `n`.
pub fn load_generic_personas(
    path: &Path,
    n: usize,
    seed: u64,
) -> Result<Vec<PersonaText>, PersonaError> {
    let text = std::fs::read_to_string(path)?;
    let mut personas = Vec::new();
    for (record_no, block) in text.split("\n\n").enumerate() {
        let sentences: Vec<&str> =
            block.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        if sentences.is_empty() {
            continue;
        }
        if !(4..=5).contains(&sentences.len()) {
            return Err(PersonaError::BadSentenceCount {
                record: record_no + 1,
                got: sentences.len(),
            });
        }
        let joined = sentences.join(" ");
        let mut hasher = Sha256::new();
        hasher.update(joined.as_bytes());
        personas.push(PersonaText {
            persona_id: format!("gen-{}", hex_prefix(&hasher.finalize(), 12)),
            kind: PersonaKind::Generic,
            text: joined,
            source_record: None,
        });
    }
    if n > personas.len() {
        return Err(PersonaError::NotEnoughPersonas { requested: n, available: personas.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    personas.shuffle(&mut rng);
    personas.truncate(n);
    Ok(personas)
}

/// Outcome of loading a silicon record table: the sample plus exclusion
/// counts mirroring the source dataset's cleaning.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordSample {
    pub records: Vec<SiliconRecord>,
    pub excluded_missing: usize,
    pub excluded_invalid: usize,
    pub removed_duplicates: usize,
}

/// Loads a CSV of demographic records, excludes rows with missing required
/// fields or invalid values, and removes exact duplicates. Row order is
/// preserved.
pub fn load_records(path: &Path, spec: &TemplateSpec) -> Result<RecordSample, PersonaError> {
    load_records_inner(path, spec)
}

/// Loads a record table and samples `n` cleaned rows deterministically.
pub fn sample_records(
    path: &Path,
    n: usize,
    seed: u64,
    spec: &TemplateSpec,
) -> Result<RecordSample, PersonaError> {
    let mut sample = load_records_inner(path, spec)?;
    if n > sample.records.len() {
        return Err(PersonaError::NotEnoughRows {
            requested: n,
            available: sample.records.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample.records.shuffle(&mut rng);
    sample.records.truncate(n);
    Ok(sample)
}

fn load_records_inner(path: &Path, spec: &TemplateSpec) -> Result<RecordSample, PersonaError> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_path(path)?;
    let headers = reader.headers()?.clone();
    let header_index: BTreeMap<&str, usize> =
        headers.iter().enumerate().map(|(i, h)| (h, i)).collect();

    let trait_columns = ["bfi_e", "bfi_a", "bfi_c", "bfi_n", "bfi_o"];
    let mut missing_columns: Vec<String> = spec
        .required_columns()
        .iter()
        .chain(trait_columns.iter())
        .filter(|c| !header_index.contains_key(**c))
        .map(|c| c.to_string())
        .collect();
    if !missing_columns.is_empty() {
        missing_columns.sort();
        return Err(PersonaError::SchemaMismatch(missing_columns));
    }

    let mut records = Vec::new();
    let mut excluded_missing = 0usize;
    let mut excluded_invalid = 0usize;
    'rows: for row in reader.records() {
        let row = row?;
        let employed_value = row.get(header_index["occ_st"]).unwrap_or("").trim().to_string();
        let employed = spec.employment_statuses.contains(&employed_value);
        let mut values = BTreeMap::new();
        for field in &spec.fields {
            let raw = row.get(header_index[field.name.as_str()]).unwrap_or("").trim();
            if raw.is_empty() {
                // occ_cat is only meaningful for employed respondents; treat a
                // blank there as unpopulated rather than a missing response.
                if field.requires_employment && !employed {
                    continue;
                }
                excluded_missing += 1;
                continue 'rows;
            }
            if field.validate(raw).is_err() {
                excluded_invalid += 1;
                continue 'rows;
            }
            values.insert(field.name.clone(), raw.to_string());
        }
        let mut trait_vals = [0.0f64; 5];
        for (slot, col) in trait_vals.iter_mut().zip(trait_columns.iter()) {
            let raw = row.get(header_index[*col]).unwrap_or("").trim();
            match raw.parse::<f64>() {
                Ok(v) if (1.0..=5.0).contains(&v) => *slot = v,
                Ok(_) | Err(_) if raw.is_empty() => {
                    excluded_missing += 1;
                    continue 'rows;
                }
                _ => {
                    excluded_invalid += 1;
                    continue 'rows;
                }
            }
        }
        records.push(SiliconRecord {
            values,
            traits: TraitScores {
                bfi_e: trait_vals[0],
                bfi_a: trait_vals[1],
                bfi_c: trait_vals[2],
                bfi_n: trait_vals[3],
                bfi_o: trait_vals[4],
            },
        });
    }

    // Exact duplicates (all fields equal) collapse to one row before sampling.
    let before = records.len();
    let mut seen = std::collections::BTreeSet::new();
    records.retain(|r| seen.insert(r.persona_id()));
    let removed_duplicates = before - records.len();

    Ok(RecordSample { records, excluded_missing, excluded_invalid, removed_duplicates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn record_26() -> SiliconRecord {
        let mut values = BTreeMap::new();
        values.insert("age".into(), "26".into());
        values.insert("ethnic".into(), "White".into());
        values.insert("m_schl".into(), "Completed GCSE / CSE / O-Levels".into());
        values.insert("f_schl".into(), "A-Levels".into());
        values.insert("n_sib".into(), "6 or more".into());
        values.insert("sex".into(), "male".into());
        values.insert("st_pub".into(), "state".into());
        values.insert("occ_st".into(), "In full time employment".into());
        values.insert("occ_cat".into(), "Administration".into());
        values.insert(
            "income".into(),
            "£30,000 to £39,999 per annum (£580 to £769 per week)".into(),
        );
        values.insert("rstat_1".into(), "no".into());
        values.insert("chldrn".into(), "3".into());
        SiliconRecord {
            values,
            traits: TraitScores { bfi_e: 3.0, bfi_a: 3.0, bfi_c: 3.0, bfi_n: 3.0, bfi_o: 3.0 },
        }
    }

    #[test]
    fn renders_the_documented_example_sentences() {
        let spec = TemplateSpec::builtin();
        let persona = render_silicon_persona(&record_26(), &spec).unwrap();
        let expected = "I am 26 years old. \
            My ethnic background is White. \
            The highest level of formal schooling my mother completed was GCSE / CSE / O-levels. \
            My father completed A-Levels. \
            I have more than 5 siblings. \
            I am male. \
            The majority of my education up to the age of 18 was in a state school. \
            My occupational status can be defined as In full time employment. \
            I work in Administration. \
            I earn £30,000 to £39,999 per annum. \
            I am currently not in an intimate relationship. \
            I have 3 children.";
        assert_eq!(persona.text, expected);
        assert!(persona.text.contains("I am 26 years old."));
        assert!(persona.text.contains("I have more than 5 siblings."));
        assert!(persona.text.contains("I am currently not in an intimate relationship."));
    }

    #[test]
    fn unpopulated_fields_are_omitted() {
        let spec = TemplateSpec::builtin();
        let mut record = record_26();
        record.values.remove("income");
        record.values.remove("chldrn");
        let persona = render_silicon_persona(&record, &spec).unwrap();
        assert!(!persona.text.contains("I earn"));
        assert!(!persona.text.contains("children"));
    }

    #[test]
    fn occupation_category_needs_employment() {
        let spec = TemplateSpec::builtin();
        let mut record = record_26();
        record.values.insert("occ_st".into(), "Still at school".into());
        let persona = render_silicon_persona(&record, &spec).unwrap();
        assert!(!persona.text.contains("I work in"));
        assert!(persona.text.contains("My occupational status can be defined as Still at school."));
    }

    #[test]
    fn trait_scores_never_reach_the_text() {
        let spec = TemplateSpec::builtin();
        let mut record = record_26();
        record.traits.bfi_e = 4.7;
        let persona = render_silicon_persona(&record, &spec).unwrap();
        assert!(!persona.text.contains("4.7"));
    }

    #[test]
    fn invalid_value_names_the_field() {
        let spec = TemplateSpec::builtin();
        let mut record = record_26();
        record.values.insert("sex".into(), "other".into());
        match render_silicon_persona(&record, &spec) {
            Err(PersonaError::InvalidFieldValue { field, value }) => {
                assert_eq!(field, "sex");
                assert_eq!(value, "other");
            }
            other => panic!("expected InvalidFieldValue, got {other:?}"),
        }
    }

    #[test]
    fn rendering_is_deterministic_and_round_trips() {
        let spec = TemplateSpec::builtin();
        let record = record_26();
        let a = render_silicon_persona(&record, &spec).unwrap();
        let b = render_silicon_persona(&record, &spec).unwrap();
        assert_eq!(a, b);
        let recovered = extract_silicon_fields(&a.text, &spec);
        assert_eq!(recovered, record.values);
    }

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn corpus(n: usize) -> String {
        (0..n)
            .map(|i| {
                format!(
                    "I like number {i}.\nI walk every day.\nI collect old maps.\nI sing in a choir."
                )
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    #[test]
    fn generic_sampling_is_seed_deterministic() {
        let file = write_temp(&corpus(60));
        let a = load_generic_personas(file.path(), 20, 7).unwrap();
        let b = load_generic_personas(file.path(), 20, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);

        let c = load_generic_personas(file.path(), 20, 8).unwrap();
        assert_eq!(c.len(), 20);
        assert_ne!(
            a.iter().map(|p| &p.persona_id).collect::<Vec<_>>(),
            c.iter().map(|p| &p.persona_id).collect::<Vec<_>>()
        );
    }

    #[test]
    fn generic_sampling_edge_counts() {
        let file = write_temp(&corpus(10));
        assert!(load_generic_personas(file.path(), 0, 1).unwrap().is_empty());
        let all = load_generic_personas(file.path(), 10, 1).unwrap();
        assert_eq!(all.len(), 10);
        assert!(matches!(
            load_generic_personas(file.path(), 11, 1),
            Err(PersonaError::NotEnoughPersonas { requested: 11, available: 10 })
        ));
    }

    #[test]
    fn generic_sentence_count_is_enforced() {
        let file = write_temp("One.\nTwo.\nThree.");
        assert!(matches!(
            load_generic_personas(file.path(), 1, 1),
            Err(PersonaError::BadSentenceCount { got: 3, .. })
        ));
    }

    const CSV_HEADER: &str = "age,ethnic,m_schl,f_schl,n_sib,sex,st_pub,occ_st,occ_cat,income,rstat_1,chldrn,bfi_e,bfi_a,bfi_c,bfi_n,bfi_o";

    fn csv_row(age: u32) -> String {
        format!(
            "{age},White,A-Levels,A-Levels,2,female,state,Retired,,\"£10,000 to £19,999 per annum (£200 to £389 per week)\",yes,0,3.5,3.5,3.5,3.5,3.5"
        )
    }

    #[test]
    fn record_sampling_dedupes_and_excludes() {
        let mut content = String::from(CSV_HEADER);
        content.push('\n');
        content.push_str(&csv_row(30));
        content.push('\n');
        content.push_str(&csv_row(30)); // duplicate
        content.push('\n');
        content.push_str(&csv_row(31));
        content.push('\n');
        // missing sex
        content.push_str("32,White,A-Levels,A-Levels,2,,state,Retired,,\"£10,000 to £19,999 per annum (£200 to £389 per week)\",yes,0,3.5,3.5,3.5,3.5,3.5\n");
        // invalid age
        content.push_str(&csv_row(150));
        let file = write_temp(&content);
        let spec = TemplateSpec::builtin();
        let sample = sample_records(file.path(), 2, 42, &spec).unwrap();
        assert_eq!(sample.records.len(), 2);
        assert_eq!(sample.removed_duplicates, 1);
        assert_eq!(sample.excluded_missing, 1);
        assert_eq!(sample.excluded_invalid, 1);

        let again = sample_records(file.path(), 2, 42, &spec).unwrap();
        assert_eq!(sample.records, again.records);
    }

    #[test]
    fn record_sampling_reports_missing_columns() {
        let file = write_temp("age,sex\n26,male\n");
        let spec = TemplateSpec::builtin();
        match sample_records(file.path(), 1, 1, &spec) {
            Err(PersonaError::SchemaMismatch(cols)) => {
                assert!(cols.contains(&"ethnic".to_string()));
                assert!(cols.contains(&"bfi_o".to_string()));
            }
            other => panic!("expected SchemaMismatch, got {other:?}"),
        }
    }

    #[test]
    fn full_table_sample_is_a_permutation() {
        let mut content = String::from(CSV_HEADER);
        content.push('\n');
        for age in 20..30 {
            content.push_str(&csv_row(age));
            content.push('\n');
        }
        let file = write_temp(&content);
        let spec = TemplateSpec::builtin();
        let sample = sample_records(file.path(), 10, 5, &spec).unwrap();
        assert_eq!(sample.records.len(), 10);
        let mut ages: Vec<String> =
            sample.records.iter().map(|r| r.values["age"].clone()).collect();
        ages.sort();
        let expected: Vec<String> = (20..30).map(|a| a.to_string()).collect();
        assert_eq!(ages, expected);
    }
}
