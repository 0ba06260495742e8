//! Command-line front end for spatial extreme-value runs.
//!
//! Every subcommand reads one JSON configuration document, writes its
//! artifacts into `--out`, and embeds the resolved configuration, the
//! global seed, and the SHA-256 of each input in its structured output,
//! so any run can be repeated bit for bit from what it wrote. Exit codes:
//! 0 success, 1 user error (bad flags, files, or configuration), 2
//! numerical failure. Errors also land on stderr as a one-line JSON
//! document.

mod artifact;
mod cmd_check;
mod cmd_fit;
mod cmd_madogram;
mod cmd_mcmc;
mod cmd_returnmap;
mod cmd_simulate;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spex::Error;

/// Spatial extreme-value modeling: fit, sample, simulate, and check
/// annual-maximum models over a station network.
#[derive(Debug, Parser)]
#[command(name = "spex", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
struct RunArgs {
    /// Run configuration document (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Directory the run writes into; created if absent.
    #[arg(long)]
    out: PathBuf,
    /// Override the configuration's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread count; the SPEX_THREADS variable takes precedence.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit trend surfaces and a dependence model by pairwise likelihood.
    Fit(RunArgs),
    /// Sample the latent Gaussian hierarchy by Markov chain Monte Carlo.
    Mcmc(RunArgs),
    /// Draw synthetic annual-maxima panels from a fully specified model.
    Simulate(RunArgs),
    /// Estimate F-madogram extremal coefficients from a panel.
    Madogram(RunArgs),
    /// Check a fitted model with envelope and quantile diagnostics.
    Check(RunArgs),
    /// Map posterior return levels from retained chain states.
    Returnmap(RunArgs),
}

impl Command {
    fn args(&self) -> &RunArgs {
        match self {
            Command::Fit(a)
            | Command::Mcmc(a)
            | Command::Simulate(a)
            | Command::Madogram(a)
            | Command::Check(a)
            | Command::Returnmap(a) => a,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            emit_error_doc("usage", &e.to_string(), 1);
            return ExitCode::from(1);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            emit_error_doc(kind_slug(&e), &e.to_string(), code);
            ExitCode::from(code)
        }
    }
}

fn dispatch(cli: &Cli) -> spex::Result<()> {
    init_threads(cli.command.args().threads)?;
    match &cli.command {
        Command::Fit(a) => cmd_fit::run(a),
        Command::Mcmc(a) => cmd_mcmc::run(a),
        Command::Simulate(a) => cmd_simulate::run(a),
        Command::Madogram(a) => cmd_madogram::run(a),
        Command::Check(a) => cmd_check::run(a),
        Command::Returnmap(a) => cmd_returnmap::run(a),
    }
}

fn init_threads(flag: Option<usize>) -> spex::Result<()> {
    let n = match std::env::var("SPEX_THREADS") {
        Ok(v) => Some(v.parse::<usize>().map_err(|_| {
            Error::invalid(format!("SPEX_THREADS must be a positive integer, got '{v}'"))
        })?),
        Err(_) => flag,
    };
    let Some(n) = n else { return Ok(()) };
    if n == 0 {
        return Err(Error::invalid("thread count must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))
}

/// 1 for user errors (inputs, configuration, data), 2 for numerical
/// failures inside an otherwise well-posed run.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::SingularHessian { .. }
        | Error::AllStartsFailed { .. }
        | Error::NotPositiveDefinite { .. }
        | Error::NonFiniteDensity { .. }
        | Error::NoRoot { .. }
        | Error::Domain(_) => 2,
        _ => 1,
    }
}

fn kind_slug(e: &Error) -> &'static str {
    match e {
        Error::InvalidParameter(_) => "invalid-parameter",
        Error::Domain(_) => "domain",
        Error::OutOfSupport(_) => "out-of-support",
        Error::OutOfSupportCells { .. } => "out-of-support-cells",
        Error::NonPositiveScale { .. } => "non-positive-scale",
        Error::NotPositiveDefinite { .. } => "not-positive-definite",
        Error::NonFiniteDensity { .. } => "non-finite-density",
        Error::NoRoot { .. } => "no-root",
        Error::UnsupportedFamily(_) => "unsupported-family",
        Error::InsufficientData(_) => "insufficient-data",
        Error::SingularHessian { .. } => "singular-hessian",
        Error::AllStartsFailed { .. } => "all-starts-failed",
        Error::EmptyBall { .. } => "empty-ball",
        Error::Shape(_) => "shape",
        Error::Schema { .. } => "schema",
        Error::Io(_) => "io",
    }
}

fn emit_error_doc(kind: &str, message: &str, exit_code: u8) {
    let doc = serde_json::json!({
        "error": { "kind": kind, "message": message, "exit_code": exit_code }
    });
    eprintln!("{doc}");
}
