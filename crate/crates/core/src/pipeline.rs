//! File-based stage orchestration: simulate/administer write a batch plan and
//! a raw-response archive, parse turns the archive into a response matrix,
//! score and analyze derive tables and the report. Stages compose only
//! through files, so an expensive collection stays re-analyzable forever.
//!
//! Every output embeds the run id minted when the batch was created;
//! downstream stages propagate it and `report` refuses to mix artifacts from
//! different runs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{
    administer, load_archive, replay, AdministerStats, Limits, RawResponse, Respondent,
    SyntheticRespondent, SyntheticRespondentConfig,
};
use crate::parser::{
    build_response_matrix, parse_raw, Disposition, DispositionCounts, FrequencyEntry, ItemRef,
    ParseOptions, ParsedResponse, ResponseMatrix,
};
use crate::persona::{PersonaKind, PersonaText, SiliconRecord, TemplateSpec};
use crate::prompt::{build_batch, ModelConfig, PromptJob, PromptTemplate};
use crate::report::{analyze, render_text, AnalysisReport, AnalyzeOptions};
use crate::scales::{Instrument, ScoreTable, SubscaleScore};

#[derive(Debug, Error)]
pub enum StageError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed file {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("artifacts come from different runs: {0} vs {1}")]
    RunIdMismatch(String, String),
    #[error(transparent)]
    Prompt(#[from] crate::prompt::PromptError),
    #[error(transparent)]
    Parser(#[from] crate::parser::ParserError),
    #[error(transparent)]
    Analyze(#[from] crate::report::AnalyzeError),
    #[error(transparent)]
    Scale(#[from] crate::scales::ScaleError),
    #[error(transparent)]
    Synthetic(#[from] crate::gateway::SyntheticError),
    #[error(transparent)]
    Replay(#[from] crate::gateway::ReplayError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StageError + '_ {
    move |source| StageError::Io { path: path.to_path_buf(), source }
}

/// Fully resolved configuration of a run; its digest is the run id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub params: BTreeMap<String, String>,
    pub run_id: String,
}

impl RunConfig {
    pub fn new(command: &str, params: BTreeMap<String, String>) -> RunConfig {
        let mut hasher = Sha256::new();
        hasher.update(command.as_bytes());
        for (k, v) in &params {
            hasher.update([0x1e]);
            hasher.update(k.as_bytes());
            hasher.update([0x1f]);
            hasher.update(v.as_bytes());
        }
        let digest = hasher.finalize();
        let mut run_id = String::new();
        for b in digest.iter().take(8) {
            use std::fmt::Write;
            write!(run_id, "{b:02x}").unwrap();
        }
        RunConfig { command: command.to_string(), params, run_id }
    }
}

/// Short stable digest of a list of strings, used to fold large inputs (e.g.
/// a persona set) into run-config parameters.
pub fn digest_strings<I, S>(parts: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part.as_ref().as_bytes());
        hasher.update([0x1f]);
    }
    let digest = hasher.finalize();
    let mut out = String::new();
    for b in digest.iter().take(8) {
        use std::fmt::Write;
        write!(out, "{b:02x}").unwrap();
    }
    out
}

/// Well-known file names inside a run's output directory.
pub struct OutDir {
    pub dir: PathBuf,
}

impl OutDir {
    pub fn new(dir: &Path) -> std::io::Result<OutDir> {
        std::fs::create_dir_all(dir)?;
        Ok(OutDir { dir: dir.to_path_buf() })
    }

    pub fn batch(&self) -> PathBuf {
        self.dir.join("batch.jsonl")
    }
    pub fn raw_responses(&self) -> PathBuf {
        self.dir.join("raw_responses.jsonl")
    }
    pub fn run_config(&self) -> PathBuf {
        self.dir.join("run.json")
    }
    pub fn matrix(&self) -> PathBuf {
        self.dir.join("matrix.csv")
    }
    pub fn parsed(&self) -> PathBuf {
        self.dir.join("parsed.csv")
    }
    pub fn dispositions(&self) -> PathBuf {
        self.dir.join("dispositions.json")
    }
    pub fn scores(&self) -> PathBuf {
        self.dir.join("scores.csv")
    }
    pub fn analysis(&self) -> PathBuf {
        self.dir.join("analysis.json")
    }
    pub fn tables(&self) -> PathBuf {
        self.dir.join("tables")
    }
    pub fn summary(&self) -> PathBuf {
        self.dir.join("summary.txt")
    }
}

// ---------------------------------------------------------------------------
// Batch plan and raw-response archives (JSONL)

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BatchRecord {
    run_id: String,
    job_id: String,
    persona_id: String,
    instrument_id: String,
    item_index: u32,
    model: String,
    temperature: f64,
    max_tokens: u32,
    prompt_text: String,
}

pub fn write_batch(path: &Path, run_id: &str, jobs: &[PromptJob]) -> Result<(), StageError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    for job in jobs {
        let record = BatchRecord {
            run_id: run_id.to_string(),
            job_id: job.job_id.clone(),
            persona_id: job.persona_id.clone(),
            instrument_id: job.instrument_id.clone(),
            item_index: job.item_index,
            model: job.model_config.model.clone(),
            temperature: job.model_config.temperature,
            max_tokens: job.model_config.max_tokens,
            prompt_text: job.prompt_text.clone(),
        };
        serde_json::to_writer(&mut file, &record)
            .map_err(|e| StageError::Malformed { path: path.into(), message: e.to_string() })?;
        file.write_all(b"\n").map_err(io_err(path))?;
    }
    file.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn read_batch(path: &Path) -> Result<(String, Vec<PromptJob>), StageError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut run_id: Option<String> = None;
    let mut jobs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: BatchRecord = serde_json::from_str(line).map_err(|e| {
            StageError::Malformed { path: path.into(), message: format!("line {}: {e}", i + 1) }
        })?;
        match &run_id {
            None => run_id = Some(record.run_id.clone()),
            Some(existing) if *existing != record.run_id => {
                return Err(StageError::RunIdMismatch(existing.clone(), record.run_id));
            }
            _ => {}
        }
        jobs.push(PromptJob {
            job_id: record.job_id,
            persona_id: record.persona_id,
            instrument_id: record.instrument_id,
            item_index: record.item_index,
            prompt_text: record.prompt_text,
            model_config: ModelConfig {
                model: record.model,
                temperature: record.temperature,
                max_tokens: record.max_tokens,
            },
        });
    }
    let run_id = run_id.ok_or_else(|| StageError::Malformed {
        path: path.into(),
        message: "batch file is empty".into(),
    })?;
    Ok((run_id, jobs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawRecord {
    run_id: String,
    #[serde(flatten)]
    response: RawResponse,
}

pub fn write_raw_responses(
    path: &Path,
    run_id: &str,
    responses: &[RawResponse],
) -> Result<(), StageError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    for response in responses {
        let record = RawRecord { run_id: run_id.to_string(), response: response.clone() };
        serde_json::to_writer(&mut file, &record)
            .map_err(|e| StageError::Malformed { path: path.into(), message: e.to_string() })?;
        file.write_all(b"\n").map_err(io_err(path))?;
    }
    file.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn read_raw_responses(path: &Path) -> Result<(String, Vec<RawResponse>), StageError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut run_id: Option<String> = None;
    let mut responses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord = serde_json::from_str(line).map_err(|e| {
            StageError::Malformed { path: path.into(), message: format!("line {}: {e}", i + 1) }
        })?;
        match &run_id {
            None => run_id = Some(record.run_id.clone()),
            Some(existing) if *existing != record.run_id => {
                return Err(StageError::RunIdMismatch(existing.clone(), record.run_id));
            }
            _ => {}
        }
        responses.push(record.response);
    }
    let run_id = run_id.ok_or_else(|| StageError::Malformed {
        path: path.into(),
        message: "response archive is empty".into(),
    })?;
    Ok((run_id, responses))
}

// ---------------------------------------------------------------------------
// CSV artifacts with an embedded run id (first line `# run_id=...`)

fn write_csv_with_run_id(
    path: &Path,
    run_id: &str,
    write_rows: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
) -> Result<(), StageError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    write_rows(&mut writer)
        .map_err(|e| StageError::Malformed { path: path.into(), message: e.to_string() })?;
    let body = writer
        .into_inner()
        .map_err(|e| StageError::Malformed { path: path.into(), message: e.to_string() })?;
    let mut file = std::fs::File::create(path).map_err(io_err(path))?;
    writeln!(file, "# run_id={run_id}").map_err(io_err(path))?;
    file.write_all(&body).map_err(io_err(path))?;
    Ok(())
}

/// Splits a CSV file into its embedded run id and body.
pub fn read_csv_run_id(path: &Path) -> Result<(String, String), StageError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.splitn(2, '\n');
    let header = lines.next().unwrap_or("");
    let run_id = header.strip_prefix("# run_id=").ok_or_else(|| StageError::Malformed {
        path: path.into(),
        message: "missing '# run_id=' header line".into(),
    })?;
    Ok((run_id.trim().to_string(), lines.next().unwrap_or("").to_string()))
}

pub fn write_matrix_csv(path: &Path, matrix: &ResponseMatrix) -> Result<(), StageError> {
    write_csv_with_run_id(path, &matrix.provenance, |w| {
        let mut header = vec!["persona_id".to_string()];
        header.extend(matrix.items.iter().map(|i| i.label()));
        w.write_record(&header)?;
        for (persona, row) in matrix.persona_ids.iter().zip(&matrix.cells) {
            let mut record = vec![persona.clone()];
            record.extend(
                row.iter().map(|cell| cell.map(|v| v.to_string()).unwrap_or_default()),
            );
            w.write_record(&record)?;
        }
        Ok(())
    })
}

pub fn read_matrix_csv(
    path: &Path,
    dispositions: DispositionCounts,
) -> Result<ResponseMatrix, StageError> {
    let (run_id, body) = read_csv_run_id(path)?;
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| StageError::Malformed { path: path.into(), message: e.to_string() })?
        .clone();
    let items: Vec<ItemRef> = headers
        .iter()
        .skip(1)
        .map(|label| {
            let (instrument, index) =
                label.rsplit_once('_').ok_or_else(|| StageError::Malformed {
                    path: path.into(),
                    message: format!("bad item column '{label}'"),
                })?;
            Ok(ItemRef {
                instrument_id: instrument.to_string(),
                item_index: index.parse().map_err(|_| StageError::Malformed {
                    path: path.into(),
                    message: format!("bad item index in '{label}'"),
                })?,
            })
        })
        .collect::<Result<_, StageError>>()?;
    let mut persona_ids = Vec::new();
    let mut cells = Vec::new();
    for row in reader.records() {
        let row = row
            .map_err(|e| StageError::Malformed { path: path.into(), message: e.to_string() })?;
        persona_ids.push(row.get(0).unwrap_or("").to_string());
        cells.push(
            (1..row.len())
                .map(|i| {
                    let field = row.get(i).unwrap_or("");
                    if field.is_empty() {
                        Ok(None)
                    } else {
                        field.parse::<i32>().map(Some).map_err(|_| StageError::Malformed {
                            path: path.into(),
                            message: format!("non-integer cell '{field}'"),
                        })
                    }
                })
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    Ok(ResponseMatrix { persona_ids, items, cells, provenance: run_id, dispositions })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedRow {
    pub job_id: String,
    pub persona_id: String,
    pub instrument_id: String,
    pub item_index: u32,
    pub value: Option<i32>,
    pub first_token_is_digit: bool,
    pub first_digit_position: Option<usize>,
    pub disposition: Disposition,
}

pub fn write_parsed_csv(path: &Path, run_id: &str, rows: &[ParsedRow]) -> Result<(), StageError> {
    write_csv_with_run_id(path, run_id, |w| {
        for row in rows {
            w.serialize(row)?;
        }
        Ok(())
    })
}

pub fn read_parsed_csv(path: &Path) -> Result<(String, Vec<ParsedRow>), StageError> {
    let (run_id, body) = read_csv_run_id(path)?;
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let rows: Result<Vec<ParsedRow>, _> = reader.deserialize().collect();
    Ok((
        run_id,
        rows.map_err(|e| StageError::Malformed { path: path.into(), message: e.to_string() })?,
    ))
}

pub fn write_scores_csv(
    path: &Path,
    run_id: &str,
    scores: &[SubscaleScore],
) -> Result<(), StageError> {
    write_csv_with_run_id(path, run_id, |w| {
        for score in scores {
            w.serialize(score)?;
        }
        Ok(())
    })
}

pub fn read_scores_csv(path: &Path) -> Result<(String, Vec<SubscaleScore>), StageError> {
    let (run_id, body) = read_csv_run_id(path)?;
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let rows: Result<Vec<SubscaleScore>, _> = reader.deserialize().collect();
    Ok((
        run_id,
        rows.map_err(|e| StageError::Malformed { path: path.into(), message: e.to_string() })?,
    ))
}

// ---------------------------------------------------------------------------
// Stages

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionSummary {
    pub run_id: String,
    pub jobs: usize,
    pub failures: usize,
    pub stats: AdministerStats,
}

/// Placeholder personas for self-contained synthetic runs.
pub fn synthetic_personas(n: usize) -> Vec<PersonaText> {
    (0..n)
        .map(|i| PersonaText {
            persona_id: format!("syn-{i:04}"),
            kind: PersonaKind::Generic,
            text: format!(
                "I am synthetic persona {i}. I exist to exercise the pipeline. \
                 I answer questionnaires from a latent trait model. \
                 My answers are reproducible from the run seed."
            ),
            source_record: None,
        })
        .collect()
}

/// Builds the batch, runs it against a respondent, and writes the batch plan,
/// the raw-response archive and the run configuration.
#[allow(clippy::too_many_arguments)]
pub fn collect(
    out: &OutDir,
    config: &RunConfig,
    template: &PromptTemplate,
    personas: &[PersonaText],
    instruments: &[Instrument],
    model: &ModelConfig,
    respondent: &dyn Respondent,
    limits: &Limits,
    cache: Option<&crate::gateway::ResponseCache>,
) -> Result<CollectionSummary, StageError> {
    let jobs = build_batch(template, personas, instruments, std::slice::from_ref(model))?;
    write_batch(&out.batch(), &config.run_id, &jobs)?;
    let (responses, stats) = administer(&jobs, respondent, limits, cache);
    write_raw_responses(&out.raw_responses(), &config.run_id, &responses)?;
    let config_path = out.run_config();
    std::fs::write(
        &config_path,
        serde_json::to_string_pretty(config).expect("config serializes"),
    )
    .map_err(io_err(&config_path))?;
    Ok(CollectionSummary {
        run_id: config.run_id.clone(),
        jobs: jobs.len(),
        failures: stats.failures,
        stats,
    })
}

/// Synthetic collection: `collect` against the latent-trait respondent.
pub fn simulate(
    out: &OutDir,
    config: &RunConfig,
    template: &PromptTemplate,
    personas: &[PersonaText],
    instruments: &[Instrument],
    model: &ModelConfig,
    synth_config: SyntheticRespondentConfig,
) -> Result<CollectionSummary, StageError> {
    let respondent = SyntheticRespondent::new(synth_config)?;
    collect(
        out,
        config,
        template,
        personas,
        instruments,
        model,
        &respondent,
        &Limits::default(),
        None,
    )
}

/// Replays a stored archive against the batch in `out`, writing a fresh
/// response archive.
pub fn administer_replay(out: &OutDir, archive_path: &Path) -> Result<CollectionSummary, StageError> {
    let (run_id, jobs) = read_batch(&out.batch())?;
    let archive = load_archive(archive_path)?;
    let outcome = replay(&jobs, &archive);
    write_raw_responses(&out.raw_responses(), &run_id, &outcome.responses)?;
    Ok(CollectionSummary {
        run_id,
        jobs: jobs.len(),
        failures: outcome.missing,
        stats: AdministerStats::default(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseSummary {
    pub run_id: String,
    pub dispositions: DispositionCounts,
}

/// Parses the raw archive in `out` into the response matrix, parsed rows and
/// disposition summary.
pub fn parse_stage(
    out: &OutDir,
    instruments: &[Instrument],
    options: ParseOptions,
) -> Result<ParseSummary, StageError> {
    let (batch_run_id, jobs) = read_batch(&out.batch())?;
    let (raw_run_id, responses) = read_raw_responses(&out.raw_responses())?;
    if batch_run_id != raw_run_id {
        return Err(StageError::RunIdMismatch(batch_run_id, raw_run_id));
    }
    let ranges: BTreeMap<&str, crate::scales::ResponseRange> =
        instruments.iter().map(|i| (i.id.as_str(), i.response_range)).collect();
    let jobs_by_id: BTreeMap<&str, &PromptJob> =
        jobs.iter().map(|j| (j.job_id.as_str(), j)).collect();

    let mut parsed = Vec::with_capacity(responses.len());
    let mut rows = Vec::with_capacity(responses.len());
    for response in &responses {
        let job = jobs_by_id.get(response.job_id.as_str()).ok_or_else(|| {
            StageError::Parser(crate::parser::ParserError::JobMismatch(format!(
                "response '{}' has no batch job",
                response.job_id
            )))
        })?;
        let range = ranges.get(job.instrument_id.as_str()).copied().ok_or_else(|| {
            StageError::Malformed {
                path: out.batch(),
                message: format!("no instrument definition for '{}'", job.instrument_id),
            }
        })?;
        let p: ParsedResponse = parse_raw(response, range, options);
        rows.push(ParsedRow {
            job_id: p.job_id.clone(),
            persona_id: job.persona_id.clone(),
            instrument_id: job.instrument_id.clone(),
            item_index: job.item_index,
            value: p.value,
            first_token_is_digit: p.first_token_is_digit,
            first_digit_position: p.first_digit_position,
            disposition: p.disposition,
        });
        parsed.push(p);
    }
    let matrix = build_response_matrix(&parsed, &jobs, &batch_run_id)?;
    write_matrix_csv(&out.matrix(), &matrix)?;
    write_parsed_csv(&out.parsed(), &batch_run_id, &rows)?;
    let summary = ParseSummary { run_id: batch_run_id, dispositions: matrix.dispositions };
    let path = out.dispositions();
    std::fs::write(&path, serde_json::to_string_pretty(&summary).expect("serializes"))
        .map_err(io_err(&path))?;
    Ok(summary)
}

/// Scores every subscale from the matrix in `out`.
pub fn score_stage(
    out: &OutDir,
    instruments: &[Instrument],
    policy: crate::scales::MissingPolicy,
) -> Result<(String, Vec<SubscaleScore>), StageError> {
    let matrix = read_matrix_csv(&out.matrix(), DispositionCounts::default())?;
    let scores = crate::report::score_matrix(&matrix, instruments, policy)?;
    write_scores_csv(&out.scores(), &matrix.provenance, &scores)?;
    Ok((matrix.provenance, scores))
}

/// Ground-truth trait score table (1-5 item means) from silicon records,
/// keyed by derived persona id, with columns named like the BFI subscales.
pub fn human_scores_from_records(records: &[SiliconRecord]) -> ScoreTable {
    let columns = vec![
        "BFI.E".to_string(),
        "BFI.A".to_string(),
        "BFI.C".to_string(),
        "BFI.N".to_string(),
        "BFI.O".to_string(),
    ];
    let persona_ids: Vec<String> = records.iter().map(|r| r.persona_id()).collect();
    let values = records
        .iter()
        .map(|r| {
            vec![
                Some(r.traits.bfi_e),
                Some(r.traits.bfi_a),
                Some(r.traits.bfi_c),
                Some(r.traits.bfi_n),
                Some(r.traits.bfi_o),
            ]
        })
        .collect();
    ScoreTable { persona_ids, columns, values }
}

/// Numeric covariates for the bias-correlate analysis: ordinal index per
/// enumerated demographic (in the template's value order), the raw age, and
/// the human trait scores. Open-set fields are skipped.
pub fn encode_demographics(records: &[SiliconRecord], spec: &TemplateSpec) -> ScoreTable {
    let mut columns: Vec<String> = Vec::new();
    for field in &spec.fields {
        if field.kind.is_open() {
            continue;
        }
        columns.push(field.name.clone());
    }
    columns.extend(["bfi_e", "bfi_a", "bfi_c", "bfi_n", "bfi_o"].map(String::from));
    let persona_ids: Vec<String> = records.iter().map(|r| r.persona_id()).collect();
    let values = records
        .iter()
        .map(|record| {
            let mut row = Vec::with_capacity(columns.len());
            for field in &spec.fields {
                match &field.kind {
                    crate::persona::FieldKind::Open => continue,
                    crate::persona::FieldKind::IntRange { .. } => row.push(
                        record.values.get(&field.name).and_then(|v| v.trim().parse().ok()),
                    ),
                    crate::persona::FieldKind::Choice { values } => row.push(
                        record
                            .values
                            .get(&field.name)
                            .and_then(|v| values.iter().position(|candidate| candidate == v))
                            .map(|idx| idx as f64),
                    ),
                }
            }
            for (_, score) in record.traits.as_pairs() {
                row.push(Some(score));
            }
            row
        })
        .collect();
    ScoreTable { persona_ids, columns, values }
}

pub struct AnalyzeStageInputs<'a> {
    pub instruments: &'a [Instrument],
    pub human_scores: Option<&'a ScoreTable>,
    pub covariates: Option<&'a ScoreTable>,
    pub compare_scores: Option<&'a ScoreTable>,
    pub options: AnalyzeOptions,
}

/// Runs the battery over the artifacts in `out` and writes the analysis JSON
/// plus CSV tables.
pub fn analyze_stage(
    out: &OutDir,
    inputs: &AnalyzeStageInputs,
) -> Result<AnalysisReport, StageError> {
    let dispositions = match std::fs::read_to_string(out.dispositions()) {
        Ok(text) => {
            serde_json::from_str::<ParseSummary>(&text)
                .map(|s| s.dispositions)
                .unwrap_or_default()
        }
        Err(_) => DispositionCounts::default(),
    };
    let matrix = read_matrix_csv(&out.matrix(), dispositions)?;

    // Frequency entries need first-token flags from parsed.csv (optional).
    let subscale_of: BTreeMap<(String, u32), String> = inputs
        .instruments
        .iter()
        .flat_map(|ins| {
            ins.items
                .iter()
                .map(move |item| ((ins.id.clone(), item.index), item.subscale.clone()))
        })
        .collect();
    let parsed_entries: Option<Vec<FrequencyEntry>> = match read_parsed_csv(&out.parsed()) {
        Ok((parsed_run_id, rows)) => {
            if parsed_run_id != matrix.provenance {
                return Err(StageError::RunIdMismatch(matrix.provenance, parsed_run_id));
            }
            Some(
                rows.into_iter()
                    .map(|row| FrequencyEntry {
                        subscale_id: subscale_of
                            .get(&(row.instrument_id.clone(), row.item_index))
                            .cloned()
                            .unwrap_or_default(),
                        item: ItemRef {
                            instrument_id: row.instrument_id,
                            item_index: row.item_index,
                        },
                        value: row.value,
                        first_token_is_digit: row.first_token_is_digit,
                    })
                    .collect(),
            )
        }
        Err(_) => None,
    };

    let report = analyze(
        &matrix,
        inputs.instruments,
        parsed_entries.as_deref(),
        inputs.human_scores,
        inputs.covariates,
        inputs.compare_scores,
        &inputs.options,
    )?;

    let analysis_path = out.analysis();
    std::fs::write(
        &analysis_path,
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )
    .map_err(io_err(&analysis_path))?;
    write_tables(out, &report)?;
    Ok(report)
}

fn write_tables(out: &OutDir, report: &AnalysisReport) -> Result<(), StageError> {
    let tables = out.tables();
    std::fs::create_dir_all(&tables).map_err(io_err(&tables))?;
    let run_id = &report.run_id;

    write_csv_with_run_id(&tables.join("reliability.csv"), run_id, |w| {
        w.write_record(["instrument", "subscale", "alpha", "omega", "glb", "n", "below_070"])?;
        for row in &report.reliability {
            w.write_record([
                row.instrument_id.as_str(),
                row.subscale_id.as_str(),
                &opt_str(row.alpha),
                &opt_str(row.omega),
                &opt_str(row.glb),
                &row.n_personas.to_string(),
                &row.below_threshold.to_string(),
            ])?;
        }
        Ok(())
    })?;

    let corr_tables: Vec<(&str, &Option<crate::stats::correlation::CorrelationMatrix>)> = vec![
        ("intercorrelations.csv", &report.intercorrelations),
        ("criterion_validity.csv", &report.criterion_validity),
    ];
    for (name, table) in corr_tables {
        if let Some(matrix) = table {
            write_csv_with_run_id(&tables.join(name), run_id, |w| {
                w.write_record(["row", "column", "r", "n"])?;
                for (i, row_label) in matrix.labels.iter().enumerate() {
                    for (j, col_label) in matrix.labels.iter().enumerate() {
                        w.write_record([
                            row_label.as_str(),
                            col_label.as_str(),
                            &opt_str(matrix.r[i][j]),
                            &matrix.n[i][j].to_string(),
                        ])?;
                    }
                }
                Ok(())
            })?;
        }
    }

    if let Some(frequencies) = &report.frequencies {
        let mut sections = vec![
            ("frequencies_item.csv", &frequencies.by_item),
            ("frequencies_subscale.csv", &frequencies.by_subscale),
        ];
        if let Some(split) = &frequencies.split_by_first_token {
            sections.push(("frequencies_split.csv", split));
        }
        for (name, table) in sections {
            write_csv_with_run_id(&tables.join(name), run_id, |w| {
                w.write_record(["group", "first_token_is_digit", "value", "count", "frequency"])?;
                for row in &table.rows {
                    w.write_record([
                        row.group.as_str(),
                        &row.first_token_is_digit
                            .map(|b| b.to_string())
                            .unwrap_or_default(),
                        &row.value.to_string(),
                        &row.count.to_string(),
                        &format!("{}", row.frequency),
                    ])?;
                }
                Ok(())
            })?;
        }
    }

    write_csv_with_run_id(&tables.join("cfa_fit.csv"), run_id, |w| {
        w.write_record(["instrument", "gfi", "ifi", "rmsea", "chi_square", "df", "n", "status"])?;
        for section in &report.cfa {
            let (status, chi, df, n) = match (&section.result, &section.error) {
                (Some(result), _) if result.converged => (
                    "converged".to_string(),
                    result.chi_square.map(|c| format!("{c}")).unwrap_or_default(),
                    result.degrees_of_freedom.to_string(),
                    result.n.to_string(),
                ),
                (Some(result), _) => (
                    result
                        .failure
                        .as_ref()
                        .map(|f| f.to_string())
                        .unwrap_or_else(|| "failed".into()),
                    String::new(),
                    result.degrees_of_freedom.to_string(),
                    result.n.to_string(),
                ),
                (None, Some(error)) => (error.clone(), String::new(), String::new(), String::new()),
                (None, None) => ("missing".into(), String::new(), String::new(), String::new()),
            };
            w.write_record([
                section.instrument_id.as_str(),
                &section.fit.map(|f| format!("{}", f.gfi)).unwrap_or_default(),
                &section.fit.map(|f| format!("{}", f.ifi)).unwrap_or_default(),
                &section.fit.map(|f| format!("{}", f.rmsea)).unwrap_or_default(),
                &chi,
                &df,
                &n,
                &status,
            ])?;
        }
        Ok(())
    })?;

    write_csv_with_run_id(&tables.join("cfa_loadings.csv"), run_id, |w| {
        w.write_record(["instrument", "item", "factor", "loading", "residual_variance"])?;
        for section in &report.cfa {
            let Some(result) = &section.result else { continue };
            if !result.converged {
                continue;
            }
            for (i, label) in result.spec.item_labels.iter().enumerate() {
                w.write_record([
                    section.instrument_id.as_str(),
                    label.as_str(),
                    result.spec.factor_names[result.spec.item_factor[i]].as_str(),
                    &format!("{}", result.loadings[i]),
                    &format!("{}", result.residuals[i]),
                ])?;
            }
        }
        Ok(())
    })?;

    write_csv_with_run_id(&tables.join("cfa_phi.csv"), run_id, |w| {
        w.write_record(["instrument", "factor_a", "factor_b", "covariance"])?;
        for section in &report.cfa {
            let Some(result) = &section.result else { continue };
            if !result.converged {
                continue;
            }
            for (a, name_a) in result.spec.factor_names.iter().enumerate() {
                for (b, name_b) in result.spec.factor_names.iter().enumerate() {
                    w.write_record([
                        section.instrument_id.as_str(),
                        name_a.as_str(),
                        name_b.as_str(),
                        &format!("{}", result.phi[a][b]),
                    ])?;
                }
            }
        }
        Ok(())
    })?;

    if report.cfa.iter().any(|s| s.robust_se.is_some()) {
        write_csv_with_run_id(&tables.join("cfa_robust_se.csv"), run_id, |w| {
            w.write_record(["instrument", "parameter", "robust_se", "naive_se"])?;
            for section in &report.cfa {
                let Some(ses) = &section.robust_se else { continue };
                for ((label, robust), naive) in
                    ses.labels.iter().zip(&ses.robust).zip(&ses.naive)
                {
                    w.write_record([
                        section.instrument_id.as_str(),
                        label.as_str(),
                        &format!("{robust}"),
                        &format!("{naive}"),
                    ])?;
                }
            }
            Ok(())
        })?;
    }

    if let Some(section) = &report.trait_bias {
        write_csv_with_run_id(&tables.join("trait_bias.csv"), run_id, |w| {
            w.write_record(["persona_id", "trait", "bias"])?;
            for (persona, row) in section.bias.persona_ids.iter().zip(&section.bias.cells) {
                for (trait_name, cell) in section.bias.traits.iter().zip(row) {
                    w.write_record([persona.as_str(), trait_name.as_str(), &opt_str(*cell)])?;
                }
            }
            Ok(())
        })?;
    }

    if let Some(correlates) = &report.bias_correlates {
        write_csv_with_run_id(&tables.join("bias_correlates.csv"), run_id, |w| {
            w.write_record(["covariate", "r", "n", "undefined_reason"])?;
            for c in correlates {
                w.write_record([
                    c.name.as_str(),
                    &opt_str(c.r),
                    &c.n.to_string(),
                    c.undefined_reason.as_deref().unwrap_or(""),
                ])?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

fn opt_str(value: Option<f64>) -> String {
    value.map(|v| format!("{v}")).unwrap_or_default()
}

/// Renders the text summary for the analysis in `out`, refusing to mix
/// artifacts from different runs.
pub fn report_stage(out: &OutDir) -> Result<String, StageError> {
    let analysis_path = out.analysis();
    let text = std::fs::read_to_string(&analysis_path).map_err(io_err(&analysis_path))?;
    let report: AnalysisReport = serde_json::from_str(&text).map_err(|e| {
        StageError::Malformed { path: analysis_path.clone(), message: e.to_string() }
    })?;

    // Every sibling artifact that names a run must name the same one.
    for path in [out.matrix(), out.parsed(), out.scores()] {
        if path.exists() {
            let (run_id, _) = read_csv_run_id(&path)?;
            if run_id != report.run_id {
                return Err(StageError::RunIdMismatch(report.run_id, run_id));
            }
        }
    }
    if out.dispositions().exists() {
        let text = std::fs::read_to_string(out.dispositions())
            .map_err(io_err(&out.dispositions()))?;
        if let Ok(summary) = serde_json::from_str::<ParseSummary>(&text) {
            if summary.run_id != report.run_id {
                return Err(StageError::RunIdMismatch(report.run_id, summary.run_id));
            }
        }
    }

    let mut rendered = render_text(&report);
    if out.dispositions().exists() {
        if let Ok(text) = std::fs::read_to_string(out.dispositions()) {
            if let Ok(summary) = serde_json::from_str::<ParseSummary>(&text) {
                let d = summary.dispositions;
                rendered.push_str(&format!(
                    "\nDispositions: {} parsed, {} no-digit, {} out-of-range, {} failed (of {})\n",
                    d.parsed,
                    d.no_digit,
                    d.out_of_range,
                    d.failed_job,
                    d.total()
                ));
            }
        }
    }
    let summary_path = out.summary();
    std::fs::write(&summary_path, &rendered).map_err(io_err(&summary_path))?;
    Ok(rendered)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::WordingMode;
    use crate::scales::builtin_instruments;

    fn run_simulation(dir: &Path, seed: u64, loading: f64) -> CollectionSummary {
        let out = OutDir::new(dir).unwrap();
        let instruments = builtin_instruments();
        let template = PromptTemplate::builtin();
        let personas = synthetic_personas(12);
        let model = ModelConfig::profile("synthetic-model");
        let synth = SyntheticRespondentConfig::from_instruments(
            &instruments,
            loading,
            (1.0 - loading * loading).max(0.04).sqrt(),
            seed,
            WordingMode::BareDigit,
        );
        let mut params = BTreeMap::new();
        params.insert("seed".into(), seed.to_string());
        params.insert("loading".into(), loading.to_string());
        let config = RunConfig::new("simulate", params);
        simulate(&out, &config, &template, &personas, &instruments, &model, synth).unwrap()
    }

    #[test]
    fn simulate_parse_score_analyze_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let summary = run_simulation(dir.path(), 7, 0.8);
        assert_eq!(summary.jobs, 12 * 104);
        assert_eq!(summary.failures, 0);

        let out = OutDir::new(dir.path()).unwrap();
        let instruments = builtin_instruments();
        let parse_summary = parse_stage(&out, &instruments, ParseOptions::default()).unwrap();
        assert_eq!(parse_summary.dispositions.total(), 12 * 104);
        assert_eq!(parse_summary.dispositions.parsed, 12 * 104);

        let (score_run_id, scores) =
            score_stage(&out, &instruments, crate::scales::MissingPolicy::default()).unwrap();
        assert_eq!(score_run_id, summary.run_id);
        assert_eq!(scores.len(), 12 * 13);

        let inputs = AnalyzeStageInputs {
            instruments: &instruments,
            human_scores: None,
            covariates: None,
            compare_scores: None,
            options: AnalyzeOptions { robust_se: false, ..AnalyzeOptions::default() },
        };
        let report = analyze_stage(&out, &inputs).unwrap();
        assert_eq!(report.run_id, summary.run_id);
        assert_eq!(report.reliability.len(), 13);

        let rendered = report_stage(&out).unwrap();
        assert!(rendered.contains(&summary.run_id));
        assert!(rendered.contains("Dispositions: 1248 parsed"));
    }

    #[test]
    fn identical_configs_produce_byte_identical_outputs() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        run_simulation(dir_a.path(), 11, 0.8);
        run_simulation(dir_b.path(), 11, 0.8);
        for name in ["batch.jsonl", "raw_responses.jsonl", "run.json"] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }

        let instruments = builtin_instruments();
        for dir in [dir_a.path(), dir_b.path()] {
            let out = OutDir::new(dir).unwrap();
            parse_stage(&out, &instruments, ParseOptions::default()).unwrap();
            score_stage(&out, &instruments, crate::scales::MissingPolicy::default()).unwrap();
        }
        for name in ["matrix.csv", "parsed.csv", "scores.csv", "dispositions.json"] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }

    #[test]
    fn different_seeds_produce_different_run_ids() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let a = run_simulation(dir_a.path(), 1, 0.8);
        let b = run_simulation(dir_b.path(), 2, 0.8);
        assert_ne!(a.run_id, b.run_id);
    }

    #[test]
    fn report_refuses_mixed_run_ids() {
        let dir = tempfile::tempdir().unwrap();
        run_simulation(dir.path(), 3, 0.8);
        let out = OutDir::new(dir.path()).unwrap();
        let instruments = builtin_instruments();
        parse_stage(&out, &instruments, ParseOptions::default()).unwrap();
        score_stage(&out, &instruments, crate::scales::MissingPolicy::default()).unwrap();
        let inputs = AnalyzeStageInputs {
            instruments: &instruments,
            human_scores: None,
            covariates: None,
            compare_scores: None,
            options: AnalyzeOptions { robust_se: false, ..AnalyzeOptions::default() },
        };
        analyze_stage(&out, &inputs).unwrap();

        // Tamper with the scores file run id.
        let (_, body) = read_csv_run_id(&out.scores()).unwrap();
        let mut tampered = String::from("# run_id=deadbeefdeadbeef\n");
        tampered.push_str(&body);
        std::fs::write(out.scores(), tampered).unwrap();

        match report_stage(&out) {
            Err(StageError::RunIdMismatch(_, bad)) => assert_eq!(bad, "deadbeefdeadbeef"),
            other => panic!("expected RunIdMismatch, got {other:?}"),
        }
    }

    #[test]
    fn matrix_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        run_simulation(dir.path(), 5, 0.8);
        let out = OutDir::new(dir.path()).unwrap();
        let instruments = builtin_instruments();
        parse_stage(&out, &instruments, ParseOptions::default()).unwrap();
        let matrix = read_matrix_csv(&out.matrix(), DispositionCounts::default()).unwrap();
        write_matrix_csv(&out.matrix(), &matrix).unwrap();
        let again = read_matrix_csv(&out.matrix(), DispositionCounts::default()).unwrap();
        assert_eq!(matrix, again);
    }

    #[test]
    fn encode_demographics_uses_value_order() {
        let spec = TemplateSpec::builtin();
        let mut values = BTreeMap::new();
        values.insert("age".to_string(), "26".to_string());
        values.insert("sex".to_string(), "female".to_string());
        values.insert("n_sib".to_string(), "2".to_string());
        let record = SiliconRecord {
            values,
            traits: crate::persona::TraitScores {
                bfi_e: 3.5,
                bfi_a: 3.0,
                bfi_c: 2.5,
                bfi_n: 4.0,
                bfi_o: 3.2,
            },
        };
        let table = encode_demographics(&[record], &spec);
        let age = table.column_index("age").unwrap();
        assert_eq!(table.values[0][age], Some(26.0));
        let sex = table.column_index("sex").unwrap();
        assert_eq!(table.values[0][sex], Some(1.0)); // second listed value
        let sib = table.column_index("n_sib").unwrap();
        assert_eq!(table.values[0][sib], Some(2.0));
        let e = table.column_index("bfi_e").unwrap();
        assert_eq!(table.values[0][e], Some(3.5));
        assert!(table.column_index("occ_cat").is_none(), "open fields are skipped");
    }
}
