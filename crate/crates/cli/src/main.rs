//! `desco` command-line pipeline: synth, propagate, train, eval, analyze, plot.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::CliError;

#[derive(Parser, Debug)]
#[command(name = "desco", version, about = "Barely-supervised 3D segmentation pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON file with the command's configuration. Flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random stream the command uses.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with train/test manifests.
    Synth(commands::synth::SynthArgs),
    /// Propagate annotated slices into dense pseudo labels.
    Propagate(commands::propagate::PropagateArgs),
    /// Co-train the two networks.
    Train(commands::train::TrainArgs),
    /// Score checkpoints on a test manifest.
    Eval(commands::eval::EvalArgs),
    /// Compare HSIC of parallel and orthogonal slice pairs.
    Analyze(commands::analyze::AnalyzeArgs),
    /// Render training curves and metric bars as SVG.
    Plot(commands::plot::PlotArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = cli.common;
    match cli.command {
        Command::Synth(a) => commands::synth::run(&common, a),
        Command::Propagate(a) => commands::propagate::run(&common, a),
        Command::Train(a) => commands::train::run(&common, a),
        Command::Eval(a) => commands::eval::run(&common, a),
        Command::Analyze(a) => commands::analyze::run(&common, a),
        Command::Plot(a) => commands::plot::run(&common, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            eprintln!("{}", CliError::Usage(first).line());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::FAILURE
        }
    }
}
