//! `statenet`: synthesis, cross-validated training, evaluation, montage
//! transfer, mixture-of-experts ensembling and occlusion maps.

mod common;
mod ensemble;
mod eval;
mod occlude;
mod plot;
mod synth;
mod train;
mod transfer;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "statenet", version, about = "Neonatal EEG seizure detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-annotator cohort.
    Synth(synth::Args),
    /// Patient-wise k-fold training; writes one checkpoint per fold.
    Train(train::Args),
    /// Re-score a training run's fold checkpoints on their test neonates.
    Eval(eval::Args),
    /// Score montage-agnostic checkpoints on a cohort with another montage.
    Transfer(transfer::Args),
    /// Train a gated mixture over frozen base models, per fold.
    Ensemble(ensemble::Args),
    /// Occlusion map of one window.
    Occlude(occlude::Args),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth::run(a),
        Command::Train(a) => train::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Transfer(a) => transfer::run(a),
        Command::Ensemble(a) => ensemble::run(a),
        Command::Occlude(a) => occlude::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
