//! The `cru` command line: `generate`, `train`, `eval`, `bench` and `trace`,
//! each driven by a key-value config file plus flag overrides.

mod commands;
mod config;

pub use commands::{build_model_config, derive_seed, generate_dataset, Manifest};
pub use config::{key_spec, parse_config_text, ConfigIssue, KeySpec, Origin, RunConfig, KEYS, PRESETS};

use crate::data::DataError;
use crate::ssm::SsmError;
use crate::train::TrainError;
use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::path::PathBuf;
use thiserror::Error;

/// Environment variable naming the directory under which runs and datasets
/// are placed when `out` is not set.
pub const OUT_ROOT_ENV: &str = "CRU_OUT_ROOT";
pub const DEFAULT_OUT_ROOT: &str = "runs";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config errors in {path}:{}", .issues.iter().map(|i| format!("\n  {i}")).collect::<String>())]
    Config { path: String, issues: Vec<ConfigIssue> },
    #[error("bad value for '{key}' (from {origin}): {msg}")]
    Value { key: String, origin: String, msg: String },
    #[error("output directory {0} exists and is not empty; pass --force to overwrite")]
    OutputExists(PathBuf),
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] SsmError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

impl CliError {
    /// Short machine-readable category printed with the message.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config { .. } | CliError::Value { .. } => "config",
            CliError::OutputExists(_) => "output-exists",
            CliError::Io(..) => "io",
            CliError::Data(_) => "data",
            CliError::Model(_) => "model",
            CliError::Train(_) => "train",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } | CliError::Value { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cru", version, about = "Continuous recurrent units on irregular time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset and write it as CSV.
    Generate(GenerateArgs),
    /// Train a model and write metrics and a checkpoint.
    Train(CommonArgs),
    /// Score a checkpoint on one split.
    Eval(CommonArgs),
    /// Time predict + update in both modes.
    Bench(CommonArgs),
    /// Record per-step gain norms of a checkpoint.
    Trace(CommonArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    checkpoint: Option<String>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    /// Comma-separated latent sizes for bench.
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    repeats: Option<String>,
    #[arg(long)]
    keep_time_frac: Option<String>,
    #[arg(long)]
    drop_value_frac: Option<String>,
}

impl CommonArgs {
    fn overrides(&self) -> Result<Vec<(String, String)>, CliError> {
        let mut out = Vec::new();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{s}'")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        let named = [
            ("preset", &self.preset),
            ("task", &self.task),
            ("mode", &self.mode),
            ("data", &self.data),
            ("out", &self.out),
            ("checkpoint", &self.checkpoint),
            ("split", &self.split),
            ("seed", &self.seed),
            ("workers", &self.workers),
            ("epochs", &self.epochs),
            ("dims", &self.dims),
            ("repeats", &self.repeats),
            ("keep_time_frac", &self.keep_time_frac),
            ("drop_value_frac", &self.drop_value_frac),
        ];
        for (k, v) in named {
            if let Some(v) = v {
                out.push((k.to_string(), v.clone()));
            }
        }
        Ok(out)
    }

    fn resolve(&self) -> Result<RunConfig, CliError> {
        RunConfig::resolve(self.config.as_deref(), &self.overrides()?)
    }
}

/// Parses `args` (program name first) and runs the subcommand; returns the
/// report printed on success.
pub fn run<I, T>(args: I) -> Result<String, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<String> = args.into_iter().map(|a| a.into().to_string_lossy().into_owned()).collect();
    let cli = Cli::try_parse_from(&argv).map_err(|e| CliError::Usage(e.render().to_string()))?;
    match cli.command {
        Command::Generate(a) => commands::cmd_generate(&a.common.resolve()?, a.force, &argv),
        Command::Train(a) => commands::cmd_train(&a.resolve()?, &argv),
        Command::Eval(a) => commands::cmd_eval(&a.resolve()?, &argv),
        Command::Bench(a) => commands::cmd_bench(&a.resolve()?, &argv),
        Command::Trace(a) => commands::cmd_trace(&a.resolve()?, &argv),
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    if let Err(e) = Cli::try_parse_from(&argv) {
        if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
            print!("{}", e.render());
            return 0;
        }
    }
    match run(argv) {
        Ok(report) => {
            print!("{report}");
            0
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            e.exit_code()
        }
    }
}
