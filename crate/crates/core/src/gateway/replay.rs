//! Replay respondent: serves stored responses keyed by job id.

use std::collections::BTreeMap;
use std::path::Path;

use super::RawResponse;
use crate::prompt::PromptJob;

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("cannot read archive: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed archive at line {line}: {message}")]
    MalformedFile { line: usize, message: String },
}

/// Loads a JSONL archive of raw responses keyed by job id. Later lines win on
/// duplicate ids.
pub fn load_archive(path: &Path) -> Result<BTreeMap<String, RawResponse>, ReplayError> {
    let text = std::fs::read_to_string(path)?;
    let mut archive = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let response: RawResponse = serde_json::from_str(line)
            .map_err(|e| ReplayError::MalformedFile { line: i + 1, message: e.to_string() })?;
        archive.insert(response.job_id.clone(), response);
    }
    Ok(archive)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub responses: Vec<RawResponse>,
    /// Archive entries that match no batch job; ignored, but counted so a
    /// mismatched archive is visible.
    pub unknown_extra: usize,
    pub missing: usize,
}

/// Matches a batch against an archive. Jobs without a stored response become
/// explicit failure records, never holes.
pub fn replay(batch: &[PromptJob], archive: &BTreeMap<String, RawResponse>) -> ReplayOutcome {
    let mut responses = Vec::with_capacity(batch.len());
    let mut missing = 0usize;
    for job in batch {
        match archive.get(&job.job_id) {
            Some(stored) => {
                let mut response = stored.clone();
                response.respondent = super::RespondentKind::Replay;
                responses.push(response);
            }
            None => {
                missing += 1;
                responses.push(RawResponse {
                    job_id: job.job_id.clone(),
                    text: String::new(),
                    respondent: super::RespondentKind::Replay,
                    latency_ms: 0,
                    attempt: 0,
                    created_at: 0,
                    failure_reason: Some("missing-from-archive".into()),
                });
            }
        }
    }
    let batch_ids: std::collections::BTreeSet<&str> =
        batch.iter().map(|j| j.job_id.as_str()).collect();
    let unknown_extra =
        archive.keys().filter(|id| !batch_ids.contains(id.as_str())).count();
    if unknown_extra > 0 {
        log::warn!("replay archive holds {unknown_extra} responses not in the batch");
    }
    ReplayOutcome { responses, unknown_extra, missing }
}
