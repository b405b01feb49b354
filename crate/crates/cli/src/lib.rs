//! `cqa`: headless administration of the workbench.
//!
//! Server-side commands (`project`, `report`, `export`) talk to a running
//! API over HTTP; `token`, `replay` and `serve` work directly on a data
//! directory; `import` only reads local files.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cqa_core::metrics::MetricsReport;
use cqa_core::model::{CoderId, Granularity, ProjectId};
use cqa_core::segmenter::{import_document, DocumentFormat, SegmentationConfig};
use cqa_core::service::{CodebookExport, ComparisonSnapshot, NewProject};
use cqa_core::store::{ProjectSummary, StoreError};
use cqa_core::{Settings, Store, Workspace};
use reqwest::blocking::{Client, RequestBuilder};
use serde::de::DeserializeOwned;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Parse(#[from] clap::Error),
    #[error("{0}")]
    Usage(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("server returned {status} {code}: {message}")]
    Api {
        status: u16,
        code: String,
        message: String,
    },
    #[error("cannot reach server: {0}")]
    Http(String),
    #[error(transparent)]
    Core(#[from] cqa_core::Error),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Segment(#[from] cqa_core::segmenter::SegmentError),
    #[error("replay diverged for: {}", .0.join(", "))]
    ReplayMismatch(Vec<String>),
    #[error("output: {0}")]
    Output(#[from] std::io::Error),
}

#[derive(Debug, Parser)]
#[command(name = "cqa", version, about = "Two-coder qualitative analysis workbench")]
pub struct Cli {
    /// API base URL.
    #[arg(long, global = true, env = "CQA_SERVER", default_value = "http://127.0.0.1:8080")]
    pub server: String,
    /// Bearer token of the acting coder.
    #[arg(long, global = true, env = "CQA_TOKEN")]
    pub token: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP API.
    Serve(ServeArgs),
    #[command(subcommand)]
    Project(ProjectCommand),
    /// Segment a local document and print its units as JSON.
    Import(ImportArgs),
    #[command(subcommand)]
    Token(TokenCommand),
    /// Print kappa, agreement rate and the ranked code pairs.
    Report(ReportArgs),
    /// Write the final codebook as JSON or CSV.
    Export(ExportArgs),
    /// Rebuild projects from their event logs and compare with the live state.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<std::net::SocketAddr>,
}

#[derive(Debug, Subcommand)]
pub enum ProjectCommand {
    /// Create a project from a document; the acting coder must be one of `--coders`.
    Create(CreateArgs),
    /// List projects the acting coder is on.
    List,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GranularityArg {
    Sentence,
    Paragraph,
}

impl From<GranularityArg> for Granularity {
    fn from(g: GranularityArg) -> Self {
        match g {
            GranularityArg::Sentence => Granularity::Sentence,
            GranularityArg::Paragraph => Granularity::Paragraph,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SourceFormat {
    Txt,
    Csv,
    /// A codebook previously written by `export --format json`.
    Json,
}

#[derive(Debug, Args)]
pub struct CreateArgs {
    #[arg(long)]
    pub name: String,
    #[arg(long)]
    pub file: PathBuf,
    /// Lead and second coder, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub coders: Vec<String>,
    #[arg(long, value_enum, default_value = "paragraph")]
    pub granularity: GranularityArg,
    #[arg(long, value_enum)]
    pub format: Option<SourceFormat>,
    #[arg(long)]
    pub csv_column: Option<String>,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    pub file: PathBuf,
    #[arg(long, value_enum, default_value = "paragraph")]
    pub granularity: GranularityArg,
    #[arg(long, value_enum)]
    pub format: Option<SourceFormat>,
    #[arg(long)]
    pub csv_column: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum TokenCommand {
    /// Issue a bearer token for a coder and print it.
    Issue {
        #[arg(long)]
        coder: String,
        #[arg(long)]
        data_dir: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub project: String,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Recompute instead of reusing the stored report.
    #[arg(long)]
    pub recalculate: bool,
    #[arg(long, value_enum, default_value = "text")]
    pub format: ReportFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub project: String,
    #[arg(long, value_enum, default_value = "json")]
    pub format: ExportFormat,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Only this project; all projects when absent.
    #[arg(long)]
    pub project: Option<String>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    execute(cli, out)
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Serve(args) => serve(args),
        Command::Token(TokenCommand::Issue { coder, data_dir }) => {
            let store = Store::open(data_dir)?;
            writeln!(out, "{}", store.issue_token(&CoderId::new(coder))?)?;
            Ok(())
        }
        Command::Import(args) => {
            let units = read_units(&args.file, args.format, args.granularity.into(), args.csv_column.as_deref())?;
            writeln!(out, "{}", serde_json::to_string_pretty(&units).expect("strings serialize"))?;
            Ok(())
        }
        Command::Replay(args) => replay(args, out),
        Command::Project(cmd) => {
            let api = Api::new(&cli.server, cli.token)?;
            match cmd {
                ProjectCommand::Create(args) => create_project(&api, args, out),
                ProjectCommand::List => {
                    let body: Value = api.send(api.get("/projects"))?;
                    let projects: Vec<ProjectSummary> =
                        serde_json::from_value(body["projects"].clone()).map_err(|e| CliError::Http(e.to_string()))?;
                    for p in projects {
                        writeln!(
                            out,
                            "{}\t{}\t{}\tv{}\t{} units\t{}, {}",
                            p.project_id, p.name, p.phase, p.version, p.unit_count, p.coders.lead, p.coders.second
                        )?;
                    }
                    Ok(())
                }
            }
        }
        Command::Report(args) => report(&Api::new(&cli.server, cli.token)?, args, out),
        Command::Export(args) => export(&Api::new(&cli.server, cli.token)?, args, out),
    }
}

fn serve(args: ServeArgs) -> Result<(), CliError> {
    let mut settings = match &args.config {
        Some(path) => Settings::from_toml_str(&read_text(path)?).map_err(|e| CliError::Config(e.to_string()))?,
        None => Settings::default(),
    };
    if let Some(dir) = args.data_dir {
        settings.data_dir = dir;
    }
    if let Some(bind) = args.bind {
        settings.bind = bind;
    }
    let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).try_init();
    let store = Arc::new(Store::open(&settings.data_dir)?);
    let workspace = Arc::new(Workspace::from_settings(store, &settings)?);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(settings.bind).await?;
        cqa_server::serve(listener, workspace).await
    })?;
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::FileNotFound(path.to_owned()),
        _ => CliError::Io {
            path: path.to_owned(),
            source: e,
        },
    })
}

fn read_text(path: &Path) -> Result<String, CliError> {
    String::from_utf8(read_bytes(path)?).map_err(|e| CliError::Io {
        path: path.to_owned(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })
}

fn guess_format(path: &Path, explicit: Option<SourceFormat>) -> SourceFormat {
    explicit.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => SourceFormat::Csv,
        Some(ext) if ext.eq_ignore_ascii_case("json") => SourceFormat::Json,
        _ => SourceFormat::Txt,
    })
}

/// Unit texts of a local document, segmented exactly as the server would.
pub fn read_units(
    path: &Path,
    format: Option<SourceFormat>,
    granularity: Granularity,
    csv_column: Option<&str>,
) -> Result<Vec<String>, CliError> {
    let bytes = read_bytes(path)?;
    let config = SegmentationConfig::new(granularity);
    let format = match guess_format(path, format) {
        SourceFormat::Json => {
            let export: CodebookExport = serde_json::from_slice(&bytes).map_err(|e| CliError::Io {
                path: path.to_owned(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
            })?;
            return Ok(export.units.into_iter().map(|u| u.text).collect());
        }
        SourceFormat::Txt => DocumentFormat::Txt,
        SourceFormat::Csv => DocumentFormat::Csv,
    };
    Ok(import_document(&bytes, format, csv_column, &config)?.into_units(&config)?)
}

fn create_project(api: &Api, args: CreateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let [lead, second]: [String; 2] = args
        .coders
        .try_into()
        .map_err(|_| CliError::Usage("--coders takes exactly two names".into()))?;
    let format = match guess_format(&args.file, args.format) {
        SourceFormat::Txt => DocumentFormat::Txt,
        SourceFormat::Csv => DocumentFormat::Csv,
        SourceFormat::Json => return Err(CliError::Usage("projects are created from txt or csv files".into())),
    };
    let body = NewProject {
        name: args.name,
        source: read_text(&args.file)?,
        format,
        csv_column: args.csv_column,
        granularity: args.granularity.into(),
        coders: [CoderId::new(lead), CoderId::new(second)],
    };
    let view: Value = api.send(api.post("/projects").json(&body))?;
    writeln!(
        out,
        "{}\t{} units",
        view["project"]["project_id"].as_str().unwrap_or_default(),
        view["units"].as_array().map_or(0, Vec::len)
    )?;
    Ok(())
}

fn threshold_query(threshold: Option<f64>) -> String {
    threshold.map_or(String::new(), |t| format!("?threshold={t}"))
}

fn report(api: &Api, args: ReportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let project = ProjectId::new(args.project);
    let path = if args.recalculate { "calculate" } else { "snapshot" };
    let url = format!("/projects/{project}/{path}{}", threshold_query(args.threshold));
    let request = if args.recalculate { api.post(&url) } else { api.get(&url) };
    let snapshot: ComparisonSnapshot = api.send(request)?;
    if args.format == ReportFormat::Json {
        writeln!(out, "{}", serde_json::to_string_pretty(&snapshot.report).expect("report serializes"))?;
        return Ok(());
    }
    write_report(out, &project, &snapshot)?;
    Ok(())
}

fn kappa_text(report: &MetricsReport) -> String {
    report.kappa.map_or("undefined".into(), |k| k.to_string())
}

/// Plain-text report. Numbers use the shortest exact decimal form, so they
/// parse back to the same bits as the API's JSON.
pub fn write_report(out: &mut dyn Write, project: &ProjectId, snapshot: &ComparisonSnapshot) -> std::io::Result<()> {
    let report = &snapshot.report;
    writeln!(out, "project: {project}")?;
    writeln!(out, "version: {}", report.computed_at_version)?;
    writeln!(out, "kappa: {}", kappa_text(report))?;
    writeln!(out, "agreement_rate: {}", report.agreement_rate)?;
    writeln!(out, "threshold: {}", report.threshold)?;
    writeln!(out)?;
    writeln!(out, "rank\tunit\tsimilarity\t{}\t{}", snapshot.coders.lead, snapshot.coders.second)?;
    for (rank, row) in snapshot.rows.iter().enumerate() {
        let code = |e: &Option<cqa_core::model::OpenCodeEntry>| e.as_ref().map_or(String::new(), |e| e.code_text.clone());
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            rank + 1,
            row.unit_id,
            row.similarity,
            code(&row.entry_a),
            code(&row.entry_b)
        )?;
    }
    Ok(())
}

fn export(api: &Api, args: ExportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let path = format!("/projects/{}/export?format=json", args.project);
    let export: CodebookExport = api.send(api.get(&path))?;
    let body = match args.format {
        ExportFormat::Json => serde_json::to_string_pretty(&export).expect("export serializes") + "\n",
        ExportFormat::Csv => export.to_csv(),
    };
    match args.out {
        Some(file) => {
            std::fs::write(&file, body).map_err(|e| CliError::Io { path: file.clone(), source: e })?;
            writeln!(
                out,
                "wrote {} decisions in {} groups to {}",
                export.decision_count(),
                export.groups.len(),
                file.display()
            )?;
        }
        None => out.write_all(body.as_bytes())?,
    }
    Ok(())
}

fn replay(args: ReplayArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let store = Store::open(&args.data_dir)?;
    let ids = match args.project {
        Some(id) => vec![ProjectId::new(id)],
        None => store.project_ids(),
    };
    let mut diverged = Vec::new();
    for id in &ids {
        let same = store.verify_replay(id)?;
        let events = store.events(id)?.len();
        writeln!(out, "{id}\t{events} events\t{}", if same { "ok" } else { "DIVERGED" })?;
        if !same {
            diverged.push(id.to_string());
        }
    }
    if diverged.is_empty() {
        Ok(())
    } else {
        Err(CliError::ReplayMismatch(diverged))
    }
}

struct Api {
    client: Client,
    base: String,
    token: String,
}

impl Api {
    fn new(server: &str, token: Option<String>) -> Result<Self, CliError> {
        let token = token.ok_or_else(|| CliError::Usage("--token (or CQA_TOKEN) is required".into()))?;
        Ok(Self {
            client: Client::new(),
            base: server.trim_end_matches('/').to_owned(),
            token,
        })
    }

    fn get(&self, path: &str) -> RequestBuilder {
        self.client.get(format!("{}{path}", self.base)).bearer_auth(&self.token)
    }

    fn post(&self, path: &str) -> RequestBuilder {
        self.client.post(format!("{}{path}", self.base)).bearer_auth(&self.token)
    }

    fn send<T: DeserializeOwned>(&self, request: RequestBuilder) -> Result<T, CliError> {
        let response = request.send().map_err(|e| CliError::Http(e.to_string()))?;
        let status = response.status();
        let body: Value = response.json().map_err(|e| CliError::Http(e.to_string()))?;
        if !status.is_success() {
            return Err(CliError::Api {
                status: status.as_u16(),
                code: body["error"].as_str().unwrap_or("Unknown").to_owned(),
                message: body["message"].as_str().unwrap_or_default().to_owned(),
            });
        }
        serde_json::from_value(body).map_err(|e| CliError::Http(format!("unexpected response: {e}")))
    }
}
