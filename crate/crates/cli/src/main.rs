//! Command-line front end: persona-conditioned questionnaire administration
//! and psychometric analysis, composed through files in an output directory.
//!
//! Stage order: `simulate`/`administer` -> `parse` -> `score` -> `analyze`
//! -> `report`. Exit codes: 0 success, 1 validation or configuration error,
//! 2 partial failure (some jobs failed; outputs were still written).

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use psychoprobe_core::gateway::{
    EndpointConfig, EndpointRespondent, Limits, ResponseCache, SyntheticRespondentConfig,
    WordingMode,
};
use psychoprobe_core::parser::ParseOptions;
use psychoprobe_core::persona::{
    load_generic_personas, load_records, render_silicon_persona, sample_records, PersonaText,
    TemplateSpec,
};
use psychoprobe_core::pipeline::{
    self, analyze_stage, digest_strings, encode_demographics, human_scores_from_records,
    parse_stage, read_matrix_csv, read_scores_csv, report_stage, score_stage,
    synthetic_personas, AnalyzeStageInputs, OutDir, RunConfig,
};
use psychoprobe_core::prompt::{ModelConfig, PromptTemplate};
use psychoprobe_core::report::{project_table, AnalyzeOptions};
use psychoprobe_core::scales::{builtin_instruments, load_instrument_dir, Instrument, MissingPolicy};
use psychoprobe_core::stats::covariance::MissingHandling;
use psychoprobe_core::ScoreTable;

#[derive(Parser)]
#[command(
    name = "psychoprobe",
    about = "Administer questionnaires to persona-conditioned respondents and analyze the psychometrics",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Output directory shared by all stages of a run.
    #[arg(long)]
    out: PathBuf,
    /// Directory of instrument definition JSON files (default: built-in
    /// BFI/PANAS/SSCS/BPAQ bundle).
    #[arg(long)]
    instruments: Option<PathBuf>,
}

#[derive(Args)]
struct PersonaArgs {
    /// Generic persona corpus (blank-line separated, one sentence per line).
    #[arg(long)]
    personas: Option<PathBuf>,
    /// Silicon record CSV with demographic and trait columns.
    #[arg(long)]
    silicon: Option<PathBuf>,
    /// Number of personas to sample (or synthesize when no source given).
    #[arg(long, default_value_t = 150)]
    count: usize,
    /// Seed for persona sampling and the synthetic respondent.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ModelArgs {
    /// Model name; picks the token-cap profile (50, or 200 for gpt-4*).
    #[arg(long, default_value = "gpt-3.5-turbo-1106")]
    model: String,
    /// Sampling temperature.
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    /// Maximum response tokens (default: model profile).
    #[arg(long)]
    max_tokens: Option<u32>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the batch against the deterministic synthetic respondent.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        personas: PersonaArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Per-item factor loading of the generating model.
        #[arg(long, default_value_t = 0.8)]
        loading: f64,
        /// Per-item residual standard deviation (default: unit total
        /// variance given the loading).
        #[arg(long)]
        residual_sd: Option<f64>,
        /// Response wording: "bare", "embedded", or "nodigit:<p>".
        #[arg(long, default_value = "bare")]
        wording: String,
    },
    /// Run the batch against a chat-completion endpoint or a replay archive.
    Administer {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        personas: PersonaArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Chat-completion endpoint URL (API key from PSYCHOPROBE_API_KEY).
        #[arg(long, conflicts_with = "replay")]
        endpoint: Option<String>,
        /// Replay archive (raw-response JSONL) instead of a live endpoint.
        #[arg(long)]
        replay: Option<PathBuf>,
        /// Maximum concurrent requests.
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        /// Request rate limit in requests per second (0 = unlimited).
        #[arg(long, default_value_t = 0.0)]
        rate: f64,
        /// Attempts per job, including the first.
        #[arg(long, default_value_t = 3)]
        max_retries: u32,
        /// Response cache directory.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Extract numeric responses from the raw archive (first-digit rule).
    Parse {
        #[command(flatten)]
        common: CommonArgs,
        /// Only accept in-range digits not adjacent to other digits.
        #[arg(long)]
        strict: bool,
    },
    /// Compute subscale scores (keyed item means) from the matrix.
    Score {
        #[command(flatten)]
        common: CommonArgs,
        /// Minimum fraction of items present for a score (1.0 = listwise).
        #[arg(long, default_value_t = 1.0)]
        min_fraction: f64,
    },
    /// Run the psychometric battery and write analysis.json plus CSV tables.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        /// Silicon record CSV supplying ground-truth traits for trait bias.
        #[arg(long)]
        silicon: Option<PathBuf>,
        /// scores.csv of another run to compare trait bias against (Welch).
        #[arg(long)]
        compare_scores: Option<PathBuf>,
        /// Missing-data handling for covariance and reliability.
        #[arg(long, default_value = "listwise")]
        missing_policy: String,
        /// Skip sandwich standard errors.
        #[arg(long)]
        no_robust_se: bool,
        /// Seed for estimator restarts.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render the human-readable summary from analysis.json.
    Report {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn load_instruments(common: &CommonArgs) -> Result<Vec<Instrument>> {
    match &common.instruments {
        Some(dir) => load_instrument_dir(dir)
            .with_context(|| format!("loading instruments from {}", dir.display())),
        None => Ok(builtin_instruments()),
    }
}

fn resolve_personas(args: &PersonaArgs) -> Result<(Vec<PersonaText>, String)> {
    if let Some(csv) = &args.silicon {
        let spec = TemplateSpec::builtin();
        let sample = sample_records(csv, args.count, args.seed, &spec)
            .with_context(|| format!("sampling silicon records from {}", csv.display()))?;
        log::info!(
            "silicon sample: {} records ({} missing excluded, {} invalid excluded, {} duplicates removed)",
            sample.records.len(),
            sample.excluded_missing,
            sample.excluded_invalid,
            sample.removed_duplicates
        );
        let personas = sample
            .records
            .iter()
            .map(|r| render_silicon_persona(r, &spec))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((personas, format!("silicon:{}", csv.display())))
    } else if let Some(file) = &args.personas {
        let personas = load_generic_personas(file, args.count, args.seed)
            .with_context(|| format!("loading generic personas from {}", file.display()))?;
        Ok((personas, format!("generic:{}", file.display())))
    } else {
        Ok((synthetic_personas(args.count), "synthetic".into()))
    }
}

fn model_config(args: &ModelArgs) -> ModelConfig {
    let mut config = ModelConfig::profile(&args.model);
    config.temperature = args.temperature;
    if let Some(max_tokens) = args.max_tokens {
        config.max_tokens = max_tokens;
    }
    config
}

fn persona_digest(personas: &[PersonaText]) -> String {
    let mut ids: Vec<&str> = personas.iter().map(|p| p.persona_id.as_str()).collect();
    ids.sort_unstable();
    digest_strings(ids)
}

fn parse_wording(text: &str) -> Result<WordingMode> {
    match text {
        "bare" => Ok(WordingMode::BareDigit),
        "embedded" => Ok(WordingMode::EmbeddedDigit),
        other => match other.strip_prefix("nodigit:") {
            Some(p) => {
                Ok(WordingMode::NoDigitFraction(p.parse().context("bad no-digit fraction")?))
            }
            None => bail!("unknown wording mode '{other}' (use bare | embedded | nodigit:<p>)"),
        },
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Simulate { common, personas, model, loading, residual_sd, wording } => {
            let instruments = load_instruments(&common)?;
            let (persona_texts, source) = resolve_personas(&personas)?;
            let model = model_config(&model);
            let wording_mode = parse_wording(&wording)?;
            let residual =
                residual_sd.unwrap_or_else(|| (1.0 - loading * loading).max(0.0001).sqrt());
            let synth = SyntheticRespondentConfig::from_instruments(
                &instruments,
                loading,
                residual,
                personas.seed,
                wording_mode,
            );
            let mut params = BTreeMap::new();
            params.insert("personas".to_string(), source);
            params.insert("persona_digest".to_string(), persona_digest(&persona_texts));
            params.insert("count".to_string(), persona_texts.len().to_string());
            params.insert("model".to_string(), model.model.clone());
            params.insert("temperature".to_string(), model.temperature.to_string());
            params.insert("max_tokens".to_string(), model.max_tokens.to_string());
            params.insert("seed".to_string(), personas.seed.to_string());
            params.insert("loading".to_string(), loading.to_string());
            params.insert("residual_sd".to_string(), residual.to_string());
            params.insert("wording".to_string(), wording);
            let config = RunConfig::new("simulate", params);
            let out = OutDir::new(&common.out)?;
            let summary = pipeline::simulate(
                &out,
                &config,
                &PromptTemplate::builtin(),
                &persona_texts,
                &instruments,
                &model,
                synth,
            )?;
            println!(
                "run {}: {} responses written ({} failures)",
                summary.run_id, summary.jobs, summary.failures
            );
            Ok(if summary.failures > 0 { 2 } else { 0 })
        }
        Command::Administer {
            common,
            personas,
            model,
            endpoint,
            replay,
            concurrency,
            rate,
            max_retries,
            cache_dir,
        } => {
            let instruments = load_instruments(&common)?;
            let (persona_texts, source) = resolve_personas(&personas)?;
            let model = model_config(&model);
            let mut params = BTreeMap::new();
            params.insert("personas".to_string(), source);
            params.insert("persona_digest".to_string(), persona_digest(&persona_texts));
            params.insert("count".to_string(), persona_texts.len().to_string());
            params.insert("model".to_string(), model.model.clone());
            params.insert("temperature".to_string(), model.temperature.to_string());
            params.insert("max_tokens".to_string(), model.max_tokens.to_string());
            params.insert("seed".to_string(), personas.seed.to_string());
            let out = OutDir::new(&common.out)?;
            let summary = match (endpoint, replay) {
                (Some(url), None) => {
                    params.insert("endpoint".to_string(), url.clone());
                    let config = RunConfig::new("administer", params);
                    let endpoint_config = EndpointConfig::from_env(&url)?;
                    let respondent = EndpointRespondent::new(endpoint_config)?;
                    let cache = match &cache_dir {
                        Some(dir) => Some(ResponseCache::open(dir)?),
                        None => None,
                    };
                    let limits = Limits {
                        max_in_flight: concurrency,
                        requests_per_second: rate,
                        max_retries,
                    };
                    pipeline::collect(
                        &out,
                        &config,
                        &PromptTemplate::builtin(),
                        &persona_texts,
                        &instruments,
                        &model,
                        &respondent,
                        &limits,
                        cache.as_ref(),
                    )?
                }
                (None, Some(archive)) => {
                    params.insert("replay".to_string(), archive.display().to_string());
                    let config = RunConfig::new("administer", params);
                    if !out.batch().exists() {
                        let jobs = psychoprobe_core::prompt::build_batch(
                            &PromptTemplate::builtin(),
                            &persona_texts,
                            &instruments,
                            std::slice::from_ref(&model),
                        )?;
                        pipeline::write_batch(&out.batch(), &config.run_id, &jobs)?;
                        std::fs::write(
                            out.run_config(),
                            serde_json::to_string_pretty(&config)?,
                        )?;
                    }
                    pipeline::administer_replay(&out, &archive)?
                }
                _ => bail!("administer needs exactly one of --endpoint or --replay"),
            };
            println!(
                "run {}: {} responses written ({} failures, {} cache hits)",
                summary.run_id, summary.jobs, summary.failures, summary.stats.cache_hits
            );
            Ok(if summary.failures > 0 { 2 } else { 0 })
        }
        Command::Parse { common, strict } => {
            let instruments = load_instruments(&common)?;
            let out = OutDir::new(&common.out)?;
            let summary = parse_stage(&out, &instruments, ParseOptions { strict })?;
            let d = summary.dispositions;
            println!(
                "run {}: {} parsed, {} no-digit, {} out-of-range, {} failed",
                summary.run_id, d.parsed, d.no_digit, d.out_of_range, d.failed_job
            );
            Ok(0)
        }
        Command::Score { common, min_fraction } => {
            let instruments = load_instruments(&common)?;
            let out = OutDir::new(&common.out)?;
            let policy = MissingPolicy { min_fraction };
            let (run_id, scores) = score_stage(&out, &instruments, policy)?;
            let missing = scores.iter().filter(|s| s.score.is_none()).count();
            println!("run {run_id}: {} scores written ({missing} missing)", scores.len());
            Ok(0)
        }
        Command::Analyze {
            common,
            silicon,
            compare_scores,
            missing_policy,
            no_robust_se,
            seed,
        } => {
            let instruments = load_instruments(&common)?;
            let out = OutDir::new(&common.out)?;
            let missing = match missing_policy.as_str() {
                "listwise" => MissingHandling::Listwise,
                "pairwise" => MissingHandling::Pairwise,
                other => bail!("unknown missing policy '{other}' (listwise | pairwise)"),
            };
            let matrix = read_matrix_csv(&out.matrix(), Default::default())?;

            let (human, covariates) = match &silicon {
                Some(csv) => {
                    let spec = TemplateSpec::builtin();
                    let records = load_records(csv, &spec)?;
                    let human_all = human_scores_from_records(&records.records);
                    let traits = human_all.columns.clone();
                    let human = project_table(&human_all, &traits, &matrix.persona_ids);
                    let covariates_all = encode_demographics(&records.records, &spec);
                    let cov_columns = covariates_all.columns.clone();
                    let covariates =
                        project_table(&covariates_all, &cov_columns, &matrix.persona_ids);
                    (Some(human), Some(covariates))
                }
                None => (None, None),
            };
            let compare = match &compare_scores {
                Some(path) => {
                    let (_, scores) = read_scores_csv(path)?;
                    Some(ScoreTable::from_scores(&scores))
                }
                None => None,
            };

            let mut options =
                AnalyzeOptions { missing, robust_se: !no_robust_se, ..AnalyzeOptions::default() };
            options.cfa.seed = seed;
            let inputs = AnalyzeStageInputs {
                instruments: &instruments,
                human_scores: human.as_ref(),
                covariates: covariates.as_ref(),
                compare_scores: compare.as_ref(),
                options,
            };
            let report = analyze_stage(&out, &inputs)?;
            let converged = report
                .cfa
                .iter()
                .filter(|s| s.result.as_ref().is_some_and(|r| r.converged))
                .count();
            println!(
                "run {}: {} reliability rows, {}/{} CFAs converged",
                report.run_id,
                report.reliability.len(),
                converged,
                report.cfa.len()
            );
            Ok(0)
        }
        Command::Report { common } => {
            let out = OutDir::new(&common.out)?;
            let rendered = report_stage(&out)?;
            print!("{rendered}");
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version print to stdout and exit 0; real usage errors are
            // validation failures under this tool's exit-code convention.
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            e.print().expect("stderr available");
            return ExitCode::from(if is_help { 0 } else { 1 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
