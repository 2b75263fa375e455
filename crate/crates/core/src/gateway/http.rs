//! Chat-completion endpoint respondent: one single-turn request per job.

use serde::{Deserialize, Serialize};

use super::{RespondError, Respondent, RespondentKind};
use crate::prompt::PromptJob;

/// Environment variable holding the API key.
pub const API_KEY_ENV: &str = "PSYCHOPROBE_API_KEY";

#[derive(Debug, Clone)]
pub struct EndpointConfig {
    pub url: String,
    pub api_key: String,
    pub request_timeout_secs: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum EndpointError {
    #[error("no API key: set {API_KEY_ENV}")]
    AuthMissing,
    #[error("cannot build HTTP client: {0}")]
    Client(String),
}

impl EndpointConfig {
    pub fn from_env(url: &str) -> Result<EndpointConfig, EndpointError> {
        let api_key = std::env::var(API_KEY_ENV).map_err(|_| EndpointError::AuthMissing)?;
        if api_key.trim().is_empty() {
            return Err(EndpointError::AuthMissing);
        }
        Ok(EndpointConfig { url: url.to_string(), api_key, request_timeout_secs: 120 })
    }
}

#[derive(Debug, Serialize, PartialEq)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Debug, Serialize, PartialEq)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    content: String,
}

/// The outgoing request body for a job: one user message holding the
/// assembled prompt, with the job's exact sampling parameters.
pub fn request_body(job: &PromptJob) -> serde_json::Value {
    serde_json::to_value(ChatRequest {
        model: &job.model_config.model,
        messages: vec![ChatMessage { role: "user", content: &job.prompt_text }],
        temperature: job.model_config.temperature,
        max_tokens: job.model_config.max_tokens,
    })
    .expect("request body is serializable")
}

pub struct EndpointRespondent {
    config: EndpointConfig,
    client: reqwest::blocking::Client,
}

impl EndpointRespondent {
    pub fn new(config: EndpointConfig) -> Result<EndpointRespondent, EndpointError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(config.request_timeout_secs))
            .build()
            .map_err(|e| EndpointError::Client(e.to_string()))?;
        Ok(EndpointRespondent { config, client })
    }
}

impl Respondent for EndpointRespondent {
    fn kind(&self) -> RespondentKind {
        RespondentKind::Endpoint
    }

    fn respond(&self, job: &PromptJob) -> Result<String, RespondError> {
        let response = self
            .client
            .post(&self.config.url)
            .bearer_auth(&self.config.api_key)
            .json(&request_body(job))
            .send()
            .map_err(|e| RespondError {
                reason: format!("endpoint-unreachable: {e}"),
                retryable: true,
            })?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(RespondError {
                reason: format!("endpoint-status-{}", status.as_u16()),
                retryable: true,
            });
        }
        if !status.is_success() {
            return Err(RespondError {
                reason: format!("endpoint-status-{}", status.as_u16()),
                retryable: false,
            });
        }
        let body: ChatResponse = response.json().map_err(|e| RespondError {
            reason: format!("malformed-response: {e}"),
            retryable: false,
        })?;
        match body.choices.into_iter().next() {
            Some(choice) => Ok(choice.message.content),
            None => Err(RespondError {
                reason: "malformed-response: no choices".into(),
                retryable: false,
            }),
        }
    }
}
