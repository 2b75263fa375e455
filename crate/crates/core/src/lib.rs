//! Administers standardized Likert questionnaires to persona-conditioned
//! respondents (a remote chat endpoint, a synthetic latent-trait generator, or
//! a replay archive) and evaluates the collected responses with a full
//! psychometric battery: reliability coefficients, correlation matrices,
//! confirmatory factor analysis with robust standard errors, and trait-bias
//! comparisons against matched human ground truth.
//!
//! The crate is organized around the pipeline stages:
//!
//! * [`scales`] — questionnaire definitions and subscale scoring
//! * [`persona`] — generic persona loading and silicon persona rendering
//! * [`prompt`] — prompt assembly and batch expansion
//! * [`gateway`] — batch execution with caching, retry and rate limiting
//! * [`parser`] — first-digit response extraction and matrix assembly
//! * [`stats`] — the psychometric estimators
//! * [`report`] — analysis report structures and text rendering
//! * [`pipeline`] — file-based stage orchestration used by the CLI

pub mod gateway;
pub mod parser;
pub mod persona;
pub mod pipeline;
pub mod prompt;
pub mod report;
pub mod scales;
pub mod stats;

pub use gateway::{RawResponse, Respondent, SyntheticRespondent, SyntheticRespondentConfig};
pub use parser::{Disposition, ParsedResponse, ResponseMatrix};
pub use persona::{PersonaKind, PersonaText, SiliconRecord};
pub use prompt::{ModelConfig, PromptJob, PromptTemplate};
pub use scales::{Instrument, Item, ResponseRange, ScoreTable, Subscale, SubscaleScore};
pub use stats::cfa::{CfaOptions, CfaResult, CfaSpec};
pub use stats::covariance::CovarianceMatrix;
pub use stats::fit_indices::FitIndices;
pub use stats::welch::WelchResult;
