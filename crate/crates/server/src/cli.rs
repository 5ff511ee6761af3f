//! `aiano` command line. Exit codes: 0 success, 1 validation failure, 2 I/O
//! or provider failure. Every failure prints one JSON line to stderr.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use aiano_core::evaluation::{evaluate, GoldSpec};
use aiano_core::export::{export_dataset, export_project, import_project};
use aiano_core::{Actor, ChatProvider, HttpProvider, MockProvider, ProjectSpec, Store};
use axum::http::HeaderValue;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::api::{self, ApiConfig, AppState, LlmBackend};
use crate::error::{parse_json, ApiError, ErrorClass};
use crate::script::{replay, Action};

#[derive(Debug, Parser)]
#[command(name = "aiano", version, about = "Annotation backend: projects, corpora, AI blocks, export and evaluation")]
pub struct Cli {
    /// Store directory.
    #[arg(long, global = true, env = "AIANO_STORE", default_value = "aiano-store")]
    pub store: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Answer generation requests with the deterministic mock model.
        #[arg(long)]
        mock_llm: bool,
        /// Allowed CORS origin for the annotation UI; repeatable.
        #[arg(long = "cors-origin")]
        cors_origins: Vec<String>,
    },
    #[command(subcommand)]
    Project(ProjectCommand),
    #[command(subcommand)]
    Docs(DocsCommand),
    #[command(subcommand)]
    Entries(EntriesCommand),
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Score entries against a gold file of relevant documents per question.
    Evaluate {
        #[arg(long)]
        project: String,
        #[arg(long)]
        gold: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum ProjectCommand {
    /// Create a project from a JSON config; prints the new project id.
    Create {
        #[arg(long)]
        file: PathBuf,
    },
    /// Write a .aiano archive.
    Export {
        #[arg(long)]
        project: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        include_documents: bool,
        #[arg(long)]
        include_entries: bool,
    },
    /// Recreate a project from a .aiano archive; prints the new project id.
    Import {
        #[arg(long)]
        file: PathBuf,
    },
    /// Print a project definition.
    Show {
        #[arg(long)]
        project: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum DocsCommand {
    /// Ingest a JSON array of documents; exits 1 if any row was rejected.
    Ingest {
        #[arg(long)]
        project: String,
        #[arg(long)]
        file: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum EntriesCommand {
    /// Replay a scripted list of annotation actions.
    Apply {
        #[arg(long)]
        project: String,
        #[arg(long)]
        file: PathBuf,
        #[command(flatten)]
        llm: LlmArgs,
        #[arg(long, default_value = "cli")]
        annotator: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Export question/answer/passage records as JSON.
    Export {
        #[arg(long)]
        project: String,
        #[arg(long)]
        question_block: String,
        #[arg(long)]
        answer_block: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct LlmArgs {
    #[arg(long)]
    pub mock_llm: bool,
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let err = ApiError::validation("UsageError", e.to_string().trim());
            eprintln!("{}", err.to_json_line());
            return ErrorClass::Validation.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("{}", err.to_json_line());
            err.class.exit_code()
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, ApiError> {
    std::fs::read(path).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, e: std::io::Error) -> ApiError {
    ApiError::internal("IoError", format!("{}: {e}", path.display()))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), ApiError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| io_error(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| ApiError::internal("IoError", e.to_string()))
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), ApiError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_output(None, &text)
}

fn open_store(path: &Path) -> Result<Store, ApiError> {
    Ok(Store::open(path)?)
}

fn execute(cli: Cli) -> Result<(), ApiError> {
    match cli.command {
        Command::Serve { bind, mock_llm, cors_origins } => serve(&cli.store, bind, mock_llm, &cors_origins),
        Command::Project(cmd) => project(&cli.store, cmd),
        Command::Docs(DocsCommand::Ingest { project, file }) => {
            let store = open_store(&cli.store)?;
            let payload: serde_json::Value = parse_json(&read_file(&file)?)?;
            let report = store.ingest_documents(&project, &payload)?;
            print_json(&report)?;
            if report.rejected.is_empty() {
                Ok(())
            } else {
                Err(ApiError::validation(
                    "RowsRejected",
                    format!("{} of {} rows rejected", report.rejected.len(), report.rejected.len() + report.accepted),
                )
                .with_details(json!({ "rejected": report.rejected })))
            }
        }
        Command::Entries(EntriesCommand::Apply { project, file, llm, annotator }) => {
            let store = open_store(&cli.store)?;
            let actions: Vec<Action> = parse_json(&read_file(&file)?)?;
            let provider = provider(&store, &project, &llm)?;
            let summary = replay(&store, &project, &actions, provider.as_ref(), &Actor::human(annotator))?;
            print_json(&summary)
        }
        Command::Dataset(DatasetCommand::Export { project, question_block, answer_block, out }) => {
            let store = open_store(&cli.store)?;
            let export = export_dataset(&store.snapshot(&project)?, &question_block, &answer_block)?;
            write_output(out.as_deref(), &export.to_json())?;
            if !export.skipped.is_empty() {
                eprintln!("{}", json!({ "skipped_entries": export.skipped }));
            }
            Ok(())
        }
        Command::Evaluate { project, gold } => {
            let store = open_store(&cli.store)?;
            let gold: GoldSpec = parse_json(&read_file(&gold)?)?;
            print_json(&evaluate(&store.snapshot(&project)?, &gold)?)
        }
    }
}

fn project(store_path: &Path, cmd: ProjectCommand) -> Result<(), ApiError> {
    let store = open_store(store_path)?;
    match cmd {
        ProjectCommand::Create { file } => {
            let spec: ProjectSpec = parse_json(&read_file(&file)?)?;
            let project = store.create_project(spec)?;
            write_output(None, &format!("{}\n", project.meta.project_id))
        }
        ProjectCommand::Export { project, out, include_documents, include_entries } => {
            let snapshot = store.snapshot(&project)?;
            write_output(out.as_deref(), &export_project(&snapshot, include_documents, include_entries).to_json())
        }
        ProjectCommand::Import { file } => {
            let text = String::from_utf8(read_file(&file)?)
                .map_err(|_| ApiError::validation("Malformed", "archive must be UTF-8"))?;
            let outcome = import_project(&store, &text)?;
            write_output(None, &format!("{}\n", outcome.project.meta.project_id))
        }
        ProjectCommand::Show { project } => print_json(&store.get_project(&project)?),
    }
}

fn provider(store: &Store, project_id: &str, llm: &LlmArgs) -> Result<Arc<dyn ChatProvider>, ApiError> {
    if llm.mock_llm {
        return Ok(Arc::new(MockProvider::new()));
    }
    let project = store.get_project(project_id)?;
    match project.provider {
        Some(config) => Ok(Arc::new(HttpProvider::from_env(config)?)),
        // plain blocks still replay; model blocks fail with the backend's error
        None => Ok(LlmBackend::from_env().provider_for(&project)),
    }
}

fn serve(store_path: &Path, bind: SocketAddr, mock_llm: bool, cors_origins: &[String]) -> Result<(), ApiError> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let store = Store::open(store_path)
        .map_err(|e| ApiError::internal("StoreUnavailable", e.to_string()))?;
    let cors_origins = cors_origins
        .iter()
        .map(|o| HeaderValue::from_str(o).map_err(|_| ApiError::validation("UsageError", format!("bad origin `{o}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    let llm = if mock_llm { LlmBackend::mock() } else { LlmBackend::from_env() };
    let state = Arc::new(AppState { store: Arc::new(store), llm });
    let app = api::router(state, &ApiConfig { cors_origins });

    let runtime = tokio::runtime::Runtime::new().map_err(|e| ApiError::internal("RuntimeFailed", e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .map_err(|e| ApiError::internal("BindFailed", format!("{bind}: {e}")))?;
        tracing::info!(%bind, mock_llm, "listening");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| ApiError::internal("ServeFailed", e.to_string()))
    })
}
