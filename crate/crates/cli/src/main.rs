mod args;
mod commands;
mod config;
mod failure;
mod input;
mod run;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Decompose(a) => commands::decompose(a),
        Command::Detect(a) => commands::detect(a),
        Command::RankAnalysis(a) => commands::rank_analysis(a),
        Command::Synth(a) => commands::synth(a),
    };
    result.unwrap_or_else(|f| f.report())
}
