//! Operator command line.
//!
//! Machine output is JSON on stdout, diagnostics go to stderr. Exit status
//! is 0 on success, 1 when the input or the store state is rejected, 2 on
//! usage errors.

use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Duration, Utc};
use clap::{Args, Parser, Subcommand};
use harmlens::incidents::IngestFormat;
use harmlens::report::{to_json_bytes, ExportFormat};
use harmlens::taxonomy::{self, Taxonomy};
use harmlens::{annotation, Platform, PlatformError};
use serde_json::json;
use thiserror::Error;

use crate::api::{self, AppState};
use crate::auth;
use crate::config::{ConfigError, FileConfig, Overrides, Settings};
use crate::reports::{self, AgreementParams};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "harmlens", version, about = "Harm taxonomy annotation platform")]
pub struct Cli {
    /// TOML config file.
    #[arg(long, global = true, env = "HARMLENS_CONFIG")]
    pub config: Option<PathBuf>,
    /// Store file.
    #[arg(long, global = true, env = "HARMLENS_DATA")]
    pub data: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Import incidents from a CSV or JSON file (upsert by id).
    Ingest {
        file: PathBuf,
        /// Defaults to the file extension.
        #[arg(long)]
        format: Option<IngestFormat>,
    },
    /// Work with taxonomy documents and versions.
    #[command(subcommand)]
    Taxonomy(TaxonomyCommand),
    /// Manage annotators and their tokens.
    #[command(subcommand)]
    Annotator(AnnotatorCommand),
    /// Manage annotation rounds.
    #[command(subcommand)]
    Round(RoundCommand),
    /// Agreement and annotation reports.
    #[command(subcommand)]
    Report(ReportCommand),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum TaxonomyCommand {
    /// Check a taxonomy document.
    Validate { file: PathBuf },
    /// Compare two taxonomies, each a file or a registered version.
    Diff { old: String, new: String },
    /// Register a taxonomy document as a new version.
    Register { file: PathBuf },
    /// Print a registered taxonomy (the current one by default).
    Show {
        #[arg(long)]
        version: Option<String>,
    },
    /// Which external taxonomies cover which harm types.
    Coverage {
        /// JSON mapping of external name to harm type ids; the bundled
        /// comparison table by default.
        #[arg(long)]
        mapping: Option<PathBuf>,
        #[arg(long)]
        markdown: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum AnnotatorCommand {
    /// Register an annotator and issue their token.
    Add {
        id: String,
        #[arg(long)]
        name: Option<String>,
        #[command(flatten)]
        token: TokenArgs,
    },
    /// Issue a fresh token, revoking the previous one.
    Token {
        id: String,
        #[command(flatten)]
        token: TokenArgs,
    },
}

#[derive(Debug, Args)]
pub struct TokenArgs {
    #[arg(long, env = "HARMLENS_TOKEN_SECRET", hide_env_values = true)]
    pub token_secret: Option<String>,
    /// Token lifetime in days.
    #[arg(long, default_value_t = 90)]
    pub ttl_days: i64,
}

#[derive(Debug, Subcommand)]
pub enum RoundCommand {
    /// Open a round over a list of incidents.
    Open {
        #[arg(long)]
        label: String,
        /// Defaults to the current taxonomy version.
        #[arg(long)]
        taxonomy_version: Option<String>,
        /// Comma-separated incident ids.
        #[arg(long, required_unless_present = "all_incidents", conflicts_with = "all_incidents")]
        incidents: Option<String>,
        /// Use every stored incident.
        #[arg(long)]
        all_incidents: bool,
    },
    Close { round: String },
    List,
}

#[derive(Debug, Subcommand)]
pub enum ReportCommand {
    /// Krippendorff's alpha for a round.
    Alpha {
        #[arg(long)]
        round: String,
        #[arg(long, default_value = "set")]
        mode: harmlens::Mode,
        #[arg(long, default_value = "ignore")]
        status: harmlens::StatusHandling,
        /// Add a bootstrap confidence interval.
        #[arg(long)]
        ci: bool,
        #[arg(long)]
        resamples: Option<usize>,
        #[arg(long)]
        confidence: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sankey graph of one incident's annotations.
    Sankey {
        #[arg(long)]
        incident: String,
        #[arg(long)]
        round: String,
    },
    /// Per-incident agreement and disputed harms.
    Summary {
        #[arg(long)]
        round: String,
        #[arg(long, default_value = "json")]
        format: ExportFormat,
    },
    /// Mean per-incident alpha per closed round.
    Trend {
        /// Comma-separated round ids; all closed rounds by default.
        #[arg(long)]
        rounds: Option<String>,
    },
    /// Annotations as JSON lines.
    Annotations {
        #[arg(long)]
        round: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "HARMLENS_PORT")]
    pub port: Option<u16>,
    #[arg(long, env = "HARMLENS_BIND")]
    pub bind: Option<std::net::IpAddr>,
    #[arg(long, env = "HARMLENS_TOKEN_SECRET", hide_env_values = true)]
    pub token_secret: Option<String>,
    /// Taxonomy document to register at startup.
    #[arg(long, env = "HARMLENS_TAXONOMY")]
    pub taxonomy: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Platform(#[from] PlatformError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Rejected(String),
    #[error("server failed: {0}")]
    Serve(std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            _ => EXIT_FAILURE,
        }
    }
}

/// Runs a parsed command line. Returns the exit status.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    match execute(cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let code = match &e {
                CliError::Platform(p) => p.code(),
                CliError::Usage(_) => "USAGE",
                _ => "ERROR",
            };
            let _ = writeln!(err, "error [{code}]: {e}");
            e.exit_code()
        }
    }
}

fn settings(cli_config: Option<&Path>, data: Option<PathBuf>, serve: Option<&ServeArgs>) -> Result<Settings, CliError> {
    let file = match cli_config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let overrides = Overrides {
        data,
        port: serve.and_then(|s| s.port),
        bind: serve.and_then(|s| s.bind),
        token_secret: serve.and_then(|s| s.token_secret.clone()),
        taxonomy: serve.and_then(|s| s.taxonomy.clone()),
    };
    Ok(Settings::resolve(overrides, file))
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|source| CliError::Read { path: path.into(), source })
}

fn load_taxonomy_file(path: &Path) -> Result<Taxonomy, CliError> {
    Ok(taxonomy::load_taxonomy(&read_file(path)?).map_err(PlatformError::from)?)
}

fn emit(out: &mut dyn Write, bytes: &[u8]) -> Result<u8, CliError> {
    out.write_all(bytes).map_err(|source| CliError::Read { path: "<stdout>".into(), source })?;
    Ok(EXIT_OK)
}

fn require_secret(explicit: Option<String>, settings: &Settings) -> Result<String, CliError> {
    explicit
        .or_else(|| settings.token_secret.clone())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| CliError::Usage("a token secret is required (--token-secret or HARMLENS_TOKEN_SECRET)".into()))
}

fn issue_token(p: &mut Platform, id: &str, secret: &str, ttl_days: i64) -> Result<auth::SessionToken, CliError> {
    if ttl_days <= 0 {
        return Err(CliError::Usage("--ttl-days must be positive".into()));
    }
    let token = auth::issue(secret.as_bytes(), id, Utc::now() + Duration::days(ttl_days));
    p.set_token_hash(id, &auth::token_hash(&token.token))?;
    Ok(token)
}

fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<u8, CliError> {
    let serve_args = match &cli.command {
        Command::Serve(args) => Some(args),
        _ => None,
    };
    let settings = settings(cli.config.as_deref(), cli.data.clone(), serve_args)?;
    let data = settings.data.clone();

    match cli.command {
        Command::Ingest { file, format } => {
            let format = match format {
                Some(f) => f,
                None => file
                    .extension()
                    .and_then(|e| e.to_str())
                    .and_then(|e| e.to_ascii_lowercase().parse().ok())
                    .ok_or_else(|| CliError::Usage(format!("cannot infer format of {}; pass --format", file.display())))?,
            };
            let document = read_file(&file)?;
            let mut p = Platform::open(&data)?;
            let report = p.ingest(&document, format)?;
            if !report.rejected.is_empty() {
                writeln!(err, "warning: {} row(s) rejected", report.rejected.len()).ok();
            }
            emit(out, &to_json_bytes(&report))
        }

        Command::Taxonomy(TaxonomyCommand::Validate { file }) => {
            let document = read_file(&file)?;
            match taxonomy::load_taxonomy(&document) {
                Ok(_) => emit(out, &to_json_bytes(&json!({ "violations": [] }))),
                Err(taxonomy::TaxonomyError::Invalid(violations)) => {
                    emit(out, &to_json_bytes(&json!({ "violations": violations })))?;
                    writeln!(err, "{} violation(s)", violations.len()).ok();
                    Ok(EXIT_FAILURE)
                }
                Err(e) => Err(PlatformError::from(e).into()),
            }
        }
        Command::Taxonomy(TaxonomyCommand::Diff { old, new }) => {
            let p = Platform::open_read_only(&data)?;
            let resolve = |arg: &str| -> Result<Taxonomy, CliError> {
                if Path::new(arg).is_file() {
                    load_taxonomy_file(Path::new(arg))
                } else {
                    Ok(p.taxonomy(arg)?.clone())
                }
            };
            let diff = taxonomy::diff_taxonomies(&resolve(&old)?, &resolve(&new)?);
            emit(out, &to_json_bytes(&diff))
        }
        Command::Taxonomy(TaxonomyCommand::Register { file }) => {
            let t = load_taxonomy_file(&file)?;
            let mut p = Platform::open(&data)?;
            let added = p.register_taxonomy(t.clone())?;
            emit(out, &to_json_bytes(&json!({ "version": t.version, "added": added })))
        }
        Command::Taxonomy(TaxonomyCommand::Show { version }) => {
            let p = Platform::open_read_only(&data)?;
            let t = match version {
                Some(v) => p.taxonomy(&v)?,
                None => p.current_taxonomy(),
            };
            emit(out, &to_json_bytes(t))
        }
        Command::Taxonomy(TaxonomyCommand::Coverage { mapping, markdown }) => {
            let p = Platform::open_read_only(&data)?;
            let mapping = match mapping {
                Some(path) => taxonomy::parse_coverage_mapping(&read_file(&path)?)
                    .map_err(|e| CliError::Rejected(e.to_string()))?,
                None => taxonomy::bundled_mapping(),
            };
            let matrix =
                taxonomy::coverage_matrix(p.current_taxonomy(), &mapping).map_err(|e| CliError::Rejected(e.to_string()))?;
            if markdown {
                emit(out, matrix.to_markdown().as_bytes())
            } else {
                emit(out, &to_json_bytes(&matrix))
            }
        }

        Command::Annotator(AnnotatorCommand::Add { id, name, token }) => {
            let secret = require_secret(token.token_secret, &settings)?;
            let mut p = Platform::open(&data)?;
            p.add_annotator(&id, name.as_deref().unwrap_or(&id))?;
            let issued = issue_token(&mut p, &id, &secret, token.ttl_days)?;
            emit(out, &to_json_bytes(&issued))
        }
        Command::Annotator(AnnotatorCommand::Token { id, token }) => {
            let secret = require_secret(token.token_secret, &settings)?;
            let mut p = Platform::open(&data)?;
            let issued = issue_token(&mut p, &id, &secret, token.ttl_days)?;
            emit(out, &to_json_bytes(&issued))
        }

        Command::Round(RoundCommand::Open { label, taxonomy_version, incidents, all_incidents }) => {
            let mut p = Platform::open(&data)?;
            let ids = if all_incidents {
                p.incidents().ids().map(String::from).collect()
            } else {
                reports::split_list(incidents.as_deref().unwrap_or_default())
            };
            let version = taxonomy_version.unwrap_or_else(|| p.current_taxonomy().version.clone());
            emit(out, &to_json_bytes(&p.open_round(&label, &version, &ids)?))
        }
        Command::Round(RoundCommand::Close { round }) => {
            let mut p = Platform::open(&data)?;
            emit(out, &to_json_bytes(&p.close_round(&round)?))
        }
        Command::Round(RoundCommand::List) => {
            let p = Platform::open_read_only(&data)?;
            emit(out, &to_json_bytes(&p.rounds()))
        }

        Command::Report(report) => {
            let p = Platform::open_read_only(&data)?;
            let bytes = match report {
                ReportCommand::Alpha { round, mode, status, ci, resamples, confidence, seed } => {
                    let params = AgreementParams { mode, status, ci, resamples, confidence, seed };
                    reports::agreement(&p, &round, &params)?
                }
                ReportCommand::Sankey { incident, round } => reports::sankey(&p, &round, &incident)?,
                ReportCommand::Summary { round, format } => reports::summary(&p, &round, format)?,
                ReportCommand::Trend { rounds } => {
                    reports::trend(&p, &rounds.as_deref().map(reports::split_list).unwrap_or_default())?
                }
                ReportCommand::Annotations { round } => match round {
                    Some(r) => annotation::export_jsonl(p.round_annotations(&r)?).into_bytes(),
                    None => annotation::export_jsonl(p.all_annotations()).into_bytes(),
                },
            };
            emit(out, &bytes)
        }

        Command::Serve(_) => {
            let secret = require_secret(None, &settings)?;
            let mut p = Platform::open(&data)?;
            if let Some(path) = &settings.taxonomy {
                let t = load_taxonomy_file(path)?;
                if p.register_taxonomy(t.clone())? {
                    tracing::info!(version = %t.version, "registered taxonomy");
                }
            }
            let runtime = tokio::runtime::Runtime::new().map_err(CliError::Serve)?;
            runtime.block_on(async move {
                let addr = std::net::SocketAddr::new(settings.bind, settings.port);
                let listener = tokio::net::TcpListener::bind(addr).await.map_err(CliError::Serve)?;
                let local = listener.local_addr().map_err(CliError::Serve)?;
                tracing::info!(%local, data = %data.display(), "listening");
                writeln!(err, "listening on http://{local}").ok();
                api::serve(listener, AppState::new(p, secret.as_bytes()), shutdown_signal()).await.map_err(CliError::Serve)
            })?;
            tracing::info!("shut down");
            Ok(EXIT_OK)
        }
    }
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        if let Ok(mut s) = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            s.recv().await;
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
