mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::exit_code;

/// Speech-separation toolkit built around attractor networks and unrolled k-means.
#[derive(Debug, Parser)]
#[command(name = "danet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// key=value file applied over the built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` override; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print the resolved configuration to stderr.
    #[arg(long, global = true)]
    pub show_config: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic mixture corpus with train/val/test manifests.
    GenData(commands::GenDataArgs),
    /// Train an embedding network and write a checkpoint and metrics CSV.
    Train(commands::TrainArgs),
    /// Separate one mixture WAV into k source WAVs.
    Separate(commands::SeparateArgs),
    /// Score a checkpoint on a manifest and write per-utterance SI-SDRi.
    Evaluate(commands::EvaluateArgs),
    /// Compare Euclidean and spherical k-means on synthetic embeddings.
    ClusterBench(commands::BenchArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Separate(a) => commands::separate(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::ClusterBench(a) => commands::cluster_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
