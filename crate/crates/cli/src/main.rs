//! Command-line front end for the team-coordination toolkit.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on validation or I/O
//! errors, 3 when an experiment misses one of its thresholds.

use std::fmt;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

mod pipeline;
mod reproduce;

/// An experiment ran to completion but missed a required threshold.
#[derive(Debug)]
pub struct ThresholdFailure(pub String);

impl fmt::Display for ThresholdFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "threshold failure: {}", self.0)
    }
}

impl std::error::Error for ThresholdFailure {}

#[derive(Parser)]
#[command(name = "tmecor", version, about = "Coordinated strategies for adversarial team games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a benchmark game to a text description file.
    Build(pipeline::BuildArgs),
    /// Inflate a team's information states until the meta-player has perfect recall.
    Refine(pipeline::RefineArgs),
    /// Compute an optimal coordinated strategy and the game value.
    Solve(pipeline::SolveArgs),
    /// Sample a trajectory buffer by self-play in the refined game.
    Sample(pipeline::SampleArgs),
    /// Train a signal-conditioned team policy on a trajectory buffer.
    Train(pipeline::TrainArgs),
    /// Score a trained policy: reward, exploitability, divergence, heatmaps.
    Eval(pipeline::EvalArgs),
    /// Run a named experiment end to end and check its thresholds.
    Reproduce(reproduce::ReproduceArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes, not usage errors.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Build(args) => pipeline::run_build(args),
        Command::Refine(args) => pipeline::run_refine(args),
        Command::Solve(args) => pipeline::run_solve(args),
        Command::Sample(args) => pipeline::run_sample(args),
        Command::Train(args) => pipeline::run_train(args),
        Command::Eval(args) => pipeline::run_eval(args),
        Command::Reproduce(args) => reproduce::run_reproduce(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<ThresholdFailure>() => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
