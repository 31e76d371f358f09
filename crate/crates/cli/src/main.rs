mod commands;
mod config;

use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "dentagent", version, about = "Dental imaging and knowledge agent")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, short, global = true, env = "DENTAGENT_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<SocketAddr>,
        /// Allow binding a non-loopback address without a bearer token.
        #[arg(long)]
        allow_open: bool,
    },
    /// Postprocess and clean parsed books into a paragraph file.
    Ingest(IngestArgs),
    /// Embed paragraphs (or a folder of private documents) into an index directory.
    BuildIndex(BuildIndexArgs),
    /// Retrieve and rerank knowledge for a query.
    Query(QueryArgs),
    /// Multiple-choice benchmark evaluation.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// Inspect the tool registry.
    Tools {
        #[command(subcommand)]
        command: ToolsCommand,
    },
    /// Serve a scripted OpenAI-compatible mock gateway.
    MockGateway {
        /// JSON mock script.
        #[arg(long)]
        script: PathBuf,
        #[arg(long, default_value_t = 0)]
        port: u16,
    },
    /// Serve canned responses for every catalog tool.
    MockTools {
        /// Catalog file; the configured or shipped catalog when unset.
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        port: u16,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum CleanArg {
    /// Rule-based reference stripping only.
    DryRun,
    /// The chat model judges and cleans each paragraph.
    Model,
}

#[derive(Args)]
pub struct IngestArgs {
    /// Parsed-document JSON files.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Output paragraph file (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = CleanArg::DryRun)]
    pub clean: CleanArg,
    /// Also add a translation of every kept paragraph.
    #[arg(long)]
    pub translate: bool,
    /// Abort on a cleaning failure instead of keeping the raw paragraph.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Args)]
pub struct BuildIndexArgs {
    /// Paragraph file written by `ingest`.
    #[arg(long, conflicts_with = "private", required_unless_present = "private")]
    pub paragraphs: Option<PathBuf>,
    /// A .txt/.md/.doc/.pdf file or folder to index as a private knowledge base.
    #[arg(long)]
    pub private: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub namespace: Option<String>,
    #[arg(long, default_value_t = 512)]
    pub max_tokens: usize,
}

#[derive(Args)]
pub struct QueryArgs {
    pub text: String,
    #[arg(long, short)]
    pub k: Option<usize>,
    /// Index directory, in addition to the configured ones.
    #[arg(long)]
    pub index: Vec<PathBuf>,
    /// Restrict to en or zh chunks; detected from the query when unset.
    #[arg(long)]
    pub lang: Option<String>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Subcommand)]
enum EvalCommand {
    Run(EvalRunArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SubjectArg {
    BareChat,
    Agent,
}

#[derive(Args)]
pub struct EvalRunArgs {
    #[arg(long, value_enum)]
    pub subject: SubjectArg,
    /// Benchmark items as JSON lines.
    #[arg(long)]
    pub benchmark: PathBuf,
    /// Knowledge items per retrieval for the agent subject.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub report_out: PathBuf,
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long, default_value_t = 4)]
    pub parallelism: usize,
}

#[derive(Subcommand)]
enum ToolsCommand {
    List {
        /// Comma-separated modalities, e.g. panoramic_radiograph.
        #[arg(long)]
        modality: Option<String>,
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        json: bool,
    },
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let config = config::AppConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Serve { bind, allow_open } => commands::serve(&config, bind, allow_open).await,
        Command::Ingest(args) => commands::ingest(&config, &args).await,
        Command::BuildIndex(args) => commands::build_index(&config, &args).await,
        Command::Query(args) => commands::query(&config, &args).await,
        Command::Eval { command: EvalCommand::Run(args) } => commands::eval_run(&config, &args).await,
        Command::Tools { command: ToolsCommand::List { modality, task, json } } => {
            commands::tools_list(&config, modality.as_deref(), task.as_deref(), json)
        }
        Command::MockGateway { script, port } => commands::mock_gateway(&script, port).await,
        Command::MockTools { catalog, port } => commands::mock_tools(&config, catalog.as_deref(), port).await,
    }
}
