//! `descentlab` command-line experiment runner.
//!
//! Exit codes: 0 success, 1 divergence or certificate failure, 2 invalid
//! input, 3 scheme/method mismatch, 4 run cap exceeded.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "descentlab", version, about = "Run, certify and sweep first-order optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed to run; repeat for several. Overrides DESCENTLAB_SEED and the config.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the configured runs and write trace CSVs.
    Run(RunArgs),
    /// Run and check the configured certificate scheme.
    Certify(RunArgs),
    /// Run every point of the config's parameter grid.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Maximum number of runs.
        #[arg(long)]
        cap: Option<usize>,
    },
    /// Fit the log-log slope of a trace column.
    FitRate {
        /// Trace CSV written by `run` or `sweep`.
        #[arg(long)]
        input: PathBuf,
        /// Column to fit; defaults to F_gap, or grad_norm_sq when the gap is unknown.
        #[arg(long)]
        column: Option<String>,
        /// Fraction of the series (from the end) used in the fit.
        #[arg(long, default_value_t = 0.5)]
        tail: f64,
    },
    /// Certify a stochastic run exactly over its expectation tree.
    Enumerate(RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => commands::cmd_run(&a.config, a.out.as_deref(), &a.seeds),
        Command::Certify(a) => commands::cmd_certify(&a.config, a.out.as_deref(), &a.seeds),
        Command::Sweep { run: a, cap } => commands::cmd_sweep(&a.config, a.out.as_deref(), &a.seeds, *cap),
        Command::FitRate { input, column, tail } => commands::cmd_fit_rate(input, column.as_deref(), *tail),
        Command::Enumerate(a) => commands::cmd_enumerate(&a.config, a.out.as_deref(), &a.seeds),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
