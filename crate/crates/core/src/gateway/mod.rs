//! Batch execution against pluggable respondents with caching, retries and
//! rate limiting.
//!
//! Raw model output is recorded verbatim; failed jobs become explicit failure
//! records carrying a reason code, never silent holes. Cached responses are
//! served without touching the respondent, which is what makes a completed
//! collection re-runnable for free.

mod cache;
mod http;
mod limiter;
mod replay;
mod synthetic;

pub use cache::{CacheLookup, ResponseCache};
pub use http::{request_body, EndpointConfig, EndpointError, EndpointRespondent, API_KEY_ENV};
pub use limiter::TokenBucket;
pub use replay::{load_archive, replay, ReplayError, ReplayOutcome};
pub use synthetic::{
    ItemModel, SyntheticError, SyntheticRespondent, SyntheticRespondentConfig, WordingMode,
};

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::prompt::PromptJob;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RespondentKind {
    Endpoint,
    Synthetic,
    Replay,
}

impl RespondentKind {
    /// Deterministic respondents get zeroed timing metadata so their output
    /// files are byte-identical across runs.
    pub fn is_deterministic(self) -> bool {
        !matches!(self, RespondentKind::Endpoint)
    }
}

/// One verbatim model response (or an explicit failure record) per job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponse {
    pub job_id: String,
    pub text: String,
    pub respondent: RespondentKind,
    pub latency_ms: u64,
    /// 1-based attempt on which the response was obtained; 0 for records
    /// that never reached the respondent (e.g. replay misses).
    pub attempt: u32,
    /// Unix seconds; 0 for deterministic respondents.
    pub created_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
}

/// Transport-level error from one attempt.
#[derive(Debug, Clone)]
pub struct RespondError {
    pub reason: String,
    pub retryable: bool,
}

pub trait Respondent: Send + Sync {
    fn kind(&self) -> RespondentKind;
    fn respond(&self, job: &PromptJob) -> Result<String, RespondError>;
}

#[derive(Debug, Clone, Copy)]
pub struct Limits {
    pub max_in_flight: usize,
    /// Requests per second across all workers; non-positive disables pacing.
    pub requests_per_second: f64,
    /// Total attempts allowed per job, including the first.
    pub max_retries: u32,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_in_flight: 4, requests_per_second: 0.0, max_retries: 3 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdministerStats {
    pub cache_hits: usize,
    pub respondent_calls: usize,
    pub failures: usize,
    pub corrupt_cache_entries: usize,
}

const RETRY_BACKOFF_MS: u64 = 10;

/// Runs every job to completion: exactly one `RawResponse` per job, in batch
/// order. Concurrency is capped at `max_in_flight` workers sharing a token
/// bucket.
pub fn administer(
    batch: &[PromptJob],
    respondent: &dyn Respondent,
    limits: &Limits,
    cache: Option<&ResponseCache>,
) -> (Vec<RawResponse>, AdministerStats) {
    let mut results: Vec<Option<RawResponse>> = vec![None; batch.len()];
    let mut stats = AdministerStats::default();
    let mut pending = VecDeque::new();
    for (idx, job) in batch.iter().enumerate() {
        match cache.map(|c| c.get(&job.job_id)) {
            Some(CacheLookup::Hit(hit)) => {
                stats.cache_hits += 1;
                if hit.failure_reason.is_some() {
                    stats.failures += 1;
                }
                results[idx] = Some(hit);
            }
            Some(CacheLookup::Corrupt(reason)) => {
                log::warn!("cache entry for {} unusable ({reason}); refetching", job.job_id);
                stats.corrupt_cache_entries += 1;
                pending.push_back(idx);
            }
            Some(CacheLookup::Miss) | None => pending.push_back(idx),
        }
    }

    let bucket = TokenBucket::new(limits.requests_per_second);
    let queue = Mutex::new(pending);
    let outputs = Mutex::new(Vec::<(usize, RawResponse, bool)>::new());
    let workers = limits.max_in_flight.max(1);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = match queue.lock().unwrap().pop_front() {
                    Some(idx) => idx,
                    None => break,
                };
                let job = &batch[idx];
                let (response, called) = run_job(job, respondent, limits, &bucket);
                outputs.lock().unwrap().push((idx, response, called));
            });
        }
    });

    for (idx, response, _) in outputs.into_inner().unwrap() {
        if response.failure_reason.is_some() {
            stats.failures += 1;
        } else if let Some(cache) = cache {
            if let Err(e) = cache.put(&response) {
                log::warn!("cannot cache response for {}: {e}", response.job_id);
            }
        }
        stats.respondent_calls += response.attempt as usize;
        results[idx] = Some(response);
    }

    (results.into_iter().map(|r| r.expect("every job completed")).collect(), stats)
}

fn run_job(
    job: &PromptJob,
    respondent: &dyn Respondent,
    limits: &Limits,
    bucket: &TokenBucket,
) -> (RawResponse, bool) {
    let deterministic = respondent.kind().is_deterministic();
    let max_attempts = limits.max_retries.max(1);
    let mut last_error = None;
    for attempt in 1..=max_attempts {
        bucket.acquire();
        let started = Instant::now();
        match respondent.respond(job) {
            Ok(text) => {
                let response = RawResponse {
                    job_id: job.job_id.clone(),
                    text,
                    respondent: respondent.kind(),
                    latency_ms: if deterministic {
                        0
                    } else {
                        started.elapsed().as_millis() as u64
                    },
                    attempt,
                    created_at: if deterministic { 0 } else { unix_now() },
                    failure_reason: None,
                };
                return (response, true);
            }
            Err(e) => {
                let retryable = e.retryable;
                last_error = Some((e, attempt));
                if !retryable {
                    break;
                }
                if attempt < max_attempts {
                    std::thread::sleep(std::time::Duration::from_millis(
                        RETRY_BACKOFF_MS << (attempt - 1).min(4),
                    ));
                }
            }
        }
    }
    let (error, attempt) = last_error.expect("loop ran at least once");
    let response = RawResponse {
        job_id: job.job_id.clone(),
        text: String::new(),
        respondent: respondent.kind(),
        latency_ms: 0,
        attempt,
        created_at: if deterministic { 0 } else { unix_now() },
        failure_reason: Some(error.reason),
    };
    (response, true)
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
