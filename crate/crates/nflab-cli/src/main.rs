//! nflab: batch driver for the periodic-box nematic flow simulator.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 blow-up detected
//! (a scientific result, not a crash; artifacts are still written).

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::fmt;
use std::path::PathBuf;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Io(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<nflab::Error> for CliError {
    fn from(e: nflab::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "nflab", about = "Pseudo-spectral nematic liquid crystal flow lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for sweeps (fallback: NFLAB_THREADS, then 1).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation config and write ledger, snapshots, and events.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a diagnostic on stored artifacts.
    Diagnose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rescale a run and tabulate the scale-invariant quantities per lambda.
    ScalingTest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Rescaling factors; repeat the flag or comma-separate.
        #[arg(long, value_delimiter = ',')]
        lambda: Vec<String>,
    },
    /// Run a parameter sweep and map the stability boundary.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Axis: initial_amplitude | gl_epsilon | dt | n.
        #[arg(long)]
        axis: String,
        /// Sweep values, comma-separated.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
}

fn threads_from(cli: &Cli) -> usize {
    cli.threads
        .or_else(|| {
            std::env::var("NFLAB_THREADS")
                .ok()
                .and_then(|s| s.parse().ok())
        })
        .unwrap_or(1)
        .max(1)
}

/// Parses a comma-joined numeric list, ignoring empty fragments; a list with
/// no usable entries is a validation error, not a usage error.
fn parse_values(raw: &[String], flag: &str) -> Result<Vec<f64>, CliError> {
    let mut out = Vec::new();
    for piece in raw.iter().filter(|s| !s.trim().is_empty()) {
        out.push(piece.trim().parse::<f64>().map_err(|_| {
            CliError::Config(format!("{flag}: `{piece}` is not a number"))
        })?);
    }
    if out.is_empty() {
        return Err(CliError::Config(format!("{flag} needs a nonempty value list")));
    }
    Ok(out)
}

fn main() {
    // exit 2 is reserved for blow-up; usage errors exit 1 like any other
    // configuration problem
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprint!("{e}");
            std::process::exit(1);
        }
        Err(e) => {
            // --help / --version
            print!("{e}");
            std::process::exit(0);
        }
    };
    let threads = threads_from(&cli);
    let quiet = cli.quiet;
    let outcome = match cli.command {
        Command::Simulate { config, out } => commands::simulate(&config, &out, quiet),
        Command::Diagnose { config, out } => commands::diagnose(&config, &out, quiet),
        Command::ScalingTest {
            config,
            out,
            lambda,
        } => parse_values(&lambda, "--lambda")
            .and_then(|lambdas| commands::scaling_test(&config, &out, &lambdas, quiet)),
        Command::Sweep {
            config,
            out,
            axis,
            values,
        } => parse_values(&values, "--values")
            .and_then(|values| commands::sweep(&config, &out, &axis, &values, threads, quiet)),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
