mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "qgrl",
    version,
    about = "Question generation with evaluator-reward fine-tuning"
)]
pub struct Cli {
    /// key=value run configuration
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic corpus.
    Synth {
        #[arg(long)]
        n: usize,
    },
    /// Build word and feature vocabularies from a corpus.
    BuildVocab {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        cap: Option<usize>,
    },
    /// Cross-entropy pretraining of the generator and pointer.
    Pretrain,
    /// Policy-gradient fine-tuning from a pretrained checkpoint.
    Finetune,
    /// Train the DAS scorer on question pairs.
    TrainDas,
    /// Generate one question per example.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Score candidate questions against references.
    Evaluate {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        references: PathBuf,
    },
    /// Finite-difference gradient check on tiny dimensions.
    Gradcheck {
        /// encoder, decoder, pointer, das, rl_loss or all
        #[arg(long, default_value = "all")]
        scope: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(1)
        }
    }
}
