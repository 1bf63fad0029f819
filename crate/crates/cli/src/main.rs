//! `decumulate`: simulate markets, train decumulation policies, solve the
//! reference HJB problem and evaluate controls.

mod commands;
mod config;
mod manifest;

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{BootstrapArgs, EvalArgs, FrontierArgs, HjbArgs, ReportArgs, SimulateArgs, TrainArgs};

#[derive(Parser, Debug)]
#[command(name = "decumulate", version, about = "Optimal retirement decumulation experiments")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "DECUMULATE_THREADS", default_value_t = 0)]
    threads: usize,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample synthetic market paths.
    Simulate(SimulateArgs),
    /// Resample a monthly return series with the stationary block bootstrap.
    Bootstrap(BootstrapArgs),
    /// Train a policy at one kappa.
    Train(TrainArgs),
    /// Train along a list of kappa values with warm starts.
    Frontier(FrontierArgs),
    /// Evaluate a checkpoint or stored controls on a path file.
    Eval(EvalArgs),
    /// Solve the dynamic program on a grid and store its controls.
    Hjb(HjbArgs),
    /// Write percentile and heat map tables for a policy.
    Report(ReportArgs),
}

/// Bad command-line input detected after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<decumulate::Error>() {
        Some(decumulate::Error::Numerical(_)) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: cannot configure {} threads: {e}", cli.threads);
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Bootstrap(a) => commands::bootstrap(a),
        Command::Train(a) => commands::train(a),
        Command::Frontier(a) => commands::frontier(a),
        Command::Eval(a) => commands::eval(a),
        Command::Hjb(a) => commands::hjb(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
