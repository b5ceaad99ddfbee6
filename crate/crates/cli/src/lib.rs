//! Command-line runner for training, fine-tuning, denoising, evaluation and
//! layer diagnostics.
//!
//! Exit codes: 0 on success, 1 for usage and validation errors, 2 for
//! runtime and I/O failures.

pub mod commands;
pub mod config;
mod log;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

pub use commands::Failure;
use config::{Overrides, RunConfig};
pub use log::RunLog;

/// Environment fallback for `--threads`.
pub const THREADS_ENV: &str = "DENOISENET_THREADS";

#[derive(Debug, Parser)]
#[command(name = "denoisenet", about = "Residual CNN image denoiser", disable_version_flag = true)]
struct Cli {
    /// Worker threads; defaults to $DENOISENET_THREADS, then all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the tool and model-format versions.
    #[arg(long, action = clap::ArgAction::Version)]
    version: Option<bool>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model from scratch on a manifest of clean images.
    Train(RunArgs),
    /// Continue training a model on one class of images.
    Finetune(RunArgs),
    /// Denoise one image.
    Denoise(RunArgs),
    /// Score directories of denoised images against ground truth.
    Eval(RunArgs),
    /// Export the layer-by-layer denoising trace of one image.
    Diagnose(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON file with flat keys; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

pub fn version_text() -> String {
    format!(
        "denoisenet {} (model format DNET v{})",
        env!("CARGO_PKG_VERSION"),
        denoisenet::model::MODEL_FORMAT_VERSION
    )
}

fn command() -> clap::Command {
    let version: &'static str = version_text().leak();
    Cli::command().version(version)
}

/// Flags are documented with underscores; `--patch-size` is accepted too.
fn normalize_flag(arg: OsString) -> OsString {
    let Some(s) = arg.to_str() else { return arg };
    match s.strip_prefix("--") {
        Some(rest) if !rest.is_empty() => {
            let (key, value) = rest.split_once('=').map_or((rest, None), |(k, v)| (k, Some(v)));
            let mut out = format!("--{}", key.replace('-', "_"));
            if let Some(v) = value {
                out.push('=');
                out.push_str(v);
            }
            out.into()
        }
        _ => arg,
    }
}

fn configure_threads(flag: Option<usize>) -> Result<(), Failure> {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Failure::Validation(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::Validation("thread count must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("cannot start {n} worker threads: {e}")))?;
    }
    Ok(())
}

fn load_config(args: RunArgs) -> Result<RunConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Validation(format!("cannot read config {}: {e}", path.display())))?;
            RunConfig::from_json(&text)
                .map_err(|e| Failure::Validation(format!("invalid config {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    args.overrides.apply(&mut config);
    Ok(config)
}

/// Parses `argv` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run(argv: impl IntoIterator<Item = OsString>) -> i32 {
    let argv: Vec<OsString> = argv.into_iter().map(normalize_flag).collect();
    let matches = command().try_get_matches_from(argv);
    let cli = match matches.and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut log = RunLog::default();
    let (name, args) = match cli.command {
        Command::Train(a) => ("train", a),
        Command::Finetune(a) => ("finetune", a),
        Command::Denoise(a) => ("denoise", a),
        Command::Eval(a) => ("eval", a),
        Command::Diagnose(a) => ("diagnose", a),
    };
    let result = configure_threads(cli.threads).and_then(|()| {
        let config = load_config(args)?;
        commands::dispatch(name, &config, &mut log)
    });
    match result {
        Ok(()) => 0,
        Err(failure) => {
            log.error(format!("error: {failure}"));
            failure.exit_code()
        }
    }
}
