//! `refcast`: dataset generation, retrieval queries, training, inference,
//! evaluation sweeps and uncertainty checks for reference-based completion.

mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "refcast", version, about = "Reference-based forecasting and imputation over related time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded ring-graph synthetic dataset.
    SynthGen(commands::SynthGenArgs),
    /// Rank references for a target and print them as JSON.
    Retrieve(commands::RetrieveArgs),
    /// Train one model and write its checkpoint and history.
    Train(commands::TrainArgs),
    /// Complete one target window and write it as CSV.
    Infer(commands::InferArgs),
    /// Train the (k, lr) grid or score a checkpoint; writes report.json and sweep.csv.
    Eval(commands::EvalArgs),
    /// Print residual std and uncertainty for an MSE, or re-check a report.
    TheoryCheck(commands::TheoryArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { error::EXIT_USAGE } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::SynthGen(a) => commands::synth_gen(a),
        Command::Retrieve(a) => commands::retrieve(a),
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::TheoryCheck(a) => commands::theory_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
