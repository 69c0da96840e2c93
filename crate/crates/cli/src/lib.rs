//! Command-line front end: argument parsing, input loading, output layout
//! and exit codes.

pub mod commands;
pub mod error;
pub mod inputs;
pub mod manifest;

use std::ffi::OsString;

use clap::{Parser, Subcommand};

pub use error::{CliError, ErrorKind};
pub use manifest::RunManifest;

use commands::{eval::EvalArgs, layer_scan::LayerScanArgs, parse::ParseArgs, train::TrainArgs, transfer::TransferArgs};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "DEPPROBE_THREADS";

#[derive(Parser, Debug)]
#[command(name = "depprobe", version, about = "Linear dependency probes over frozen embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a probe for every seed.
    Train(TrainArgs),
    /// Decode trees with a trained probe.
    Parse(ParseArgs),
    /// Score predicted trees against gold trees.
    Eval(EvalArgs),
    /// Correlate predicted and observed cross-lingual transfer.
    Transfer(TransferArgs),
    /// Train a probe per layer and report dev scores.
    LayerScan(LayerScanArgs),
}

impl Command {
    pub fn run(&self) -> Result<RunManifest, CliError> {
        match self {
            Command::Train(a) => commands::train::run(a),
            Command::Parse(a) => commands::parse::run(a),
            Command::Eval(a) => commands::eval::run(a),
            Command::Transfer(a) => commands::transfer::run(a),
            Command::LayerScan(a) => commands::layer_scan::run(a),
        }
    }
}

/// Configure the global thread pool from [`THREADS_ENV`], if set.
pub fn configure_threads(value: Option<&str>) -> Result<(), CliError> {
    let Some(value) = value else { return Ok(()) };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::argument(format!("{} must be a positive integer, got `{}`", THREADS_ENV, value)))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::new(ErrorKind::Internal, e.to_string()))
}

/// Parse arguments and run the command. Returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ErrorKind::Argument.exit_code() } else { 0 };
        }
    };
    match cli.command.run() {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}
