//! `flowdep`: batch front end for the flow dependence toolkit.

mod commands;
mod failure;
mod io;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::failure::{Failure, FailureKind};

#[derive(Debug, Parser)]
#[command(
    name = "flowdep",
    version,
    about = "Dependence analysis of flow size, duration and rate"
)]
struct Cli {
    /// Worker thread cap; 1 is the reference behaviour. Output never depends on it.
    #[arg(long, global = true, env = "FLOWDEP_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Aggregate packet events into connection and ADU summaries.
    Ingest(commands::IngestArgs),
    /// Population counts and bytes, overall and for HTTP.
    Summarize(commands::SummarizeArgs),
    /// Log-log correlation grid over size and duration thresholds.
    CorrGrid(commands::CorrGridArgs),
    /// Correlation of a bivariate normal truncated on its first coordinate.
    Truncnorm(commands::TruncnormArgs),
    /// Simulated flow summaries from bivariate normal log10 size/duration.
    Simulate(commands::SimulateArgs),
    /// Extremal dependence measure across top-radius fractions.
    Edm(commands::EdmArgs),
    /// Downsampled log-log point cloud for plotting.
    Scatter(commands::ScatterArgs),
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot configure thread pool: {e}")))?;
    }
    let invocation = io::invocation();
    match cli.command {
        Command::Ingest(args) => commands::ingest(args, &invocation),
        Command::Summarize(args) => commands::summarize(args, &invocation),
        Command::CorrGrid(args) => commands::corr_grid(args, &invocation),
        Command::Truncnorm(args) => commands::truncnorm(args),
        Command::Simulate(args) => commands::simulate(args, &invocation),
        Command::Edm(args) => commands::edm(args, &invocation),
        Command::Scatter(args) => commands::scatter(args, &invocation),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(FailureKind::Usage.code())
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("flowdep: {:#}", failure.error);
            ExitCode::from(failure.kind.code())
        }
    }
}
