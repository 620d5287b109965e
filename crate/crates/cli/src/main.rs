//! `spl` — relabel weakly labeled clip corpora with sub-pseudo-labels.
//!
//! Each subcommand wraps one stage of the pipeline (corpus simulation,
//! teacher training and inference, confusion analysis, label-space
//! construction, relabeling, student training, evaluation) and exchanges
//! data through stable on-disk formats, so stages compose file-to-file into
//! exactly what the end-to-end `experiment` command computes.
//!
//! Exit codes: 0 ok, 2 usage, 3 missing/malformed files, 4 numeric
//! divergence, 5 internal. Runtime failures print one line to stderr:
//! `error[<category>]: <message>`.

mod commands;
mod error;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;

/// Turn weak video labels plus a teacher's predictions into pseudo-labeled
/// pretraining sets, and benchmark the relabeling strategies end to end.
#[derive(Parser)]
#[command(name = "spl", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic weakly labeled clip corpus (JSONL).
    Simulate(commands::SimulateArgs),
    /// Train the linear-softmax teacher on records with true labels.
    Teach(commands::TeachArgs),
    /// Annotate records with a checkpoint's predictions.
    Infer(commands::InferArgs),
    /// Tally weak labels against teacher predictions into a CSV matrix.
    Confusion(commands::ConfusionArgs),
    /// Build a pseudo-label space from a confusion matrix.
    Labelspace(commands::LabelspaceArgs),
    /// Assign pseudo-labels through a label space or a baseline strategy.
    Relabel(commands::RelabelArgs),
    /// Summarize how relabeled samples spread over pseudo-label classes.
    Stats(commands::StatsArgs),
    /// Pretrain the MLP student on pseudo-labeled records.
    Pretrain(commands::PretrainArgs),
    /// Fine-tune a student checkpoint on records with true labels.
    Finetune(commands::FinetuneArgs),
    /// Report a checkpoint's accuracy on records with true labels.
    Evaluate(commands::EvaluateArgs),
    /// Run the multi-seed strategy comparison end to end.
    Experiment(commands::ExperimentArgs),
    /// Rerun one budgeted strategy across class budgets.
    Sweep(commands::SweepArgs),
}

fn run(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(args) => commands::simulate(args),
        Command::Teach(args) => commands::teach(args),
        Command::Infer(args) => commands::infer(args),
        Command::Confusion(args) => commands::confusion(args),
        Command::Labelspace(args) => commands::labelspace(args),
        Command::Relabel(args) => commands::relabel_records(args),
        Command::Stats(args) => commands::stats(args),
        Command::Pretrain(args) => commands::pretrain(args),
        Command::Finetune(args) => commands::finetune(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Experiment(args) => commands::experiment(args),
        Command::Sweep(args) => commands::sweep(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            err.exit_code()
        }
    }
}
