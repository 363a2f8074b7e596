//! `spontts` command-line driver.
//!
//! Every command prints one JSON report on stdout and writes a copy to
//! `<out>/reports/<command>.json`. Logs go to stderr (`RUST_LOG`).
//!
//! | exit code | meaning |
//! |---|---|
//! | 0 | success |
//! | 2 | bad command line |
//! | 3 | invalid input: config, manifest, labels, audio that fails to ingest |
//! | 4 | a required earlier stage or artifact is missing |
//! | 5 | runtime failure: io, numerical, checkpoint, external service |

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spontts::config::Profile;
use spontts::error::Error;

#[derive(Parser, Debug)]
#[command(name = "spontts", version, about = "Spontaneous-style conversational TTS pipeline")]
struct Cli {
    /// TOML config merged over the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run seed; every stage seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, value_parser = parse_profile)]
    profile: Option<Profile>,

    /// Run directory holding caches, checkpoints, state and reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract features for the labelled and/or unlabelled corpus.
    Prepare {
        /// Manifest of the labelled (high-quality) corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Manifest of the unlabelled (low-quality) corpus.
        #[arg(long)]
        unlabeled: Option<PathBuf>,
    },
    /// Train the filled-pause and prolongation detectors.
    TrainDetector,
    /// Label the unlabelled corpus with the trained detectors.
    PseudoLabel,
    /// Train the acoustic model on the pseudo-labelled corpus.
    Pretrain,
    /// Re-initialize the decoder and train on the labelled corpus.
    Finetune,
    Synth(SynthArgs),
    /// Precision, recall and F1 of every detector on the labelled test split.
    Evaluate,
    /// Generate the bundled synthetic corpora and run every stage.
    Demo,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Acoustic checkpoint (default: the fine-tuned one in the run directory).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Utterance id from a prepared corpus; its conversation supplies the history.
    #[arg(long, conflicts_with_all = ["text", "phonemes"], required_unless_present = "text")]
    utterance: Option<String>,
    /// Text without history, one character per symbol.
    #[arg(long, requires = "phonemes")]
    text: Option<String>,
    /// Phonemes per character, groups separated by `|` (e.g. "n i3|h ao3").
    #[arg(long, requires = "text")]
    phonemes: Option<String>,
    /// Explicit per-character labels, e.g. `0,1,0`; predicted when absent.
    #[arg(long)]
    labels: Option<String>,
    /// Executable run as `<vocoder> <mel> <wav>`; Griffin-Lim when absent.
    #[arg(long)]
    vocoder: Option<String>,
    /// Write the mel and sidecar only.
    #[arg(long, conflicts_with = "vocoder")]
    mel_only: bool,
    /// Output file stem under `<out>/synth/`.
    #[arg(long)]
    name: Option<String>,
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        e if e.is_validation() => 3,
        Error::Precondition(_) => 4,
        _ => 5,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
