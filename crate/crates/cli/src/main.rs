mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{AnalyzeArgs, ImputeArgs, SimulateArgs};

/// Multiple imputation of missing covariates by FCS and SMC-FCS.
#[derive(Parser)]
#[command(name = "smcfcs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Impute a dataset and write the stacked imputations.
    Impute(ImputeArgs),
    /// Fit a substantive model to stacked imputations and pool by Rubin's rules.
    Analyze(AnalyzeArgs),
    /// Run a simulation scenario and write its summary.
    Simulate(SimulateArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Impute(a) => commands::impute(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Simulate(a) => commands::simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
