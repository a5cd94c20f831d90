mod commands;
mod config;
mod svg;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Train MLPs and their path-decomposed (GLAI) counterparts.
#[derive(Parser)]
#[command(name = "glai", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset from a random teacher MLP.
    GenData(commands::GenDataArgs),
    /// Train a standard MLP with early stopping.
    TrainMlp(commands::TrainMlpArgs),
    /// Expand a trained MLP into paths and prune to parameter parity.
    ToGlai(commands::ToGlaiArgs),
    /// Train the linear estimator of a GLAI model.
    TrainEstimator(commands::TrainEstimatorArgs),
    /// Run the MLP and GLAI arms side by side and report the comparison.
    Pipeline(commands::PipelineArgs),
    /// List the highest-scoring paths of a GLAI model as CSV.
    InspectPaths(commands::InspectArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::TrainMlp(a) => commands::train_mlp(a),
        Command::ToGlai(a) => commands::to_glai(a),
        Command::TrainEstimator(a) => commands::train_estimator(a),
        Command::Pipeline(a) => commands::pipeline(a),
        Command::InspectPaths(a) => commands::inspect_paths(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
