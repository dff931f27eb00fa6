//! Command line front end and HTTP service for the clipdesk pipeline:
//! `gen-data → train → build-index → search/classify/eval/serve`.

pub mod api;
mod commands;
pub mod service;

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Environment variable holding the stderr log level.
pub const LOG_ENV: &str = "CLIPDESK_LOG";

#[derive(Debug, Parser)]
#[command(
    name = "clipdesk",
    version,
    about = "Contrastive image-text training and search at desk scale"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic captioned-shapes corpus.
    GenData(GenDataArgs),
    /// Train a model on the corpus' train split.
    Train(TrainArgs),
    /// Encode corpus images into a retrieval index.
    BuildIndex(BuildIndexArgs),
    /// Text-to-image search against an index.
    Search(SearchArgs),
    /// Zero-shot classification of an indexed item.
    Classify(ClassifyArgs),
    /// Evaluate a trained model and write a metric report.
    Eval(EvalArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output directory (manifest.jsonl plus images/).
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus config as JSON; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Training config as JSON; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Where to write the training report (loss trace, config, wall time).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildIndexArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Index path to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Only index these splits (repeatable); default is every entry.
    #[arg(long)]
    pub split: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub query: String,
    #[arg(long, default_value_t = 10)]
    pub k: i64,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Indexed item to classify.
    #[arg(long)]
    pub id: u64,
    /// Comma-separated class names.
    #[arg(long, value_delimiter = ',', required = true)]
    pub classes: Vec<String>,
    /// Prompt template with one `{}` (repeatable); default is the built-in set.
    #[arg(long = "template")]
    pub templates: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Report path to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Report format; inferred from the extension of --out when omitted.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Seed for few-shot sampling.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Also run the efficiency curve and batch-size sweep (trains many models).
    #[arg(long)]
    pub sweeps: bool,
    /// JSON with optional "train" and "sweep" sections used by --sweeps.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    /// Corpus directory (manifest and rasters).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    init_logging();
    match commands::execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}
