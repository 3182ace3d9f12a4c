//! The `wordlattice` command line: vocabulary building, lattice dumps,
//! pre-training instance generation, toy training and attention summaries.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::Settings;
pub use error::{CliError, CliResult};

/// Environment variable read for log filters (`error`, `warn`, `info`, ...).
pub const LOG_ENV: &str = "WORDLATTICE_LOG";

#[derive(Debug, Parser)]
#[command(name = "wordlattice", version, about = "Word-lattice pre-training pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// key = value settings file; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub vocab: Option<PathBuf>,
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// base, lite or toy
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// 1 (128 chars / 173 tokens) or 2 (512 chars / 692 tokens)
    #[arg(long, global = true)]
    pub phase: Option<u8>,
    #[arg(long, global = true)]
    pub mask_ratio: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub shards: Option<usize>,
    #[arg(long, global = true)]
    pub steps: Option<u64>,
    #[arg(long, global = true)]
    pub grad_check: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a vocabulary file from a corpus and a word-frequency list.
    BuildVocab {
        /// Word-frequency file: `word<TAB>count` per line.
        #[arg(long)]
        words: Option<PathBuf>,
        /// Keep at most this many multi-character words (default: all).
        #[arg(long)]
        max_words: Option<usize>,
    },
    /// Write one lattice record per non-empty input line.
    Lattice,
    /// Pack a corpus into masked sentence-pair instances.
    MakeInstances {
        /// jsonl or binary
        #[arg(long)]
        format: Option<String>,
    },
    /// Train the encoder on instance files.
    TrainToy {
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        warmup: Option<u64>,
        /// Coordinates sampled per tensor by --grad-check.
        #[arg(long)]
        grad_samples: Option<usize>,
    },
    /// Mean attention received by each lattice token of one sentence.
    AttnSummary {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// The sentence; otherwise the first non-empty line of --input.
        #[arg(long)]
        text: Option<String>,
    },
}

fn path_str(p: Option<PathBuf>) -> Option<String> {
    p.map(|p| p.to_string_lossy().into_owned())
}

/// Merge the config file (if any) with explicit flags.
pub fn resolve_settings(cli: &Cli) -> CliResult<Settings> {
    let c = &cli.common;
    let mut s = match &c.config {
        Some(p) => Settings::load_config(p)?,
        None => Settings::default(),
    };
    s.set_opt("vocab", path_str(c.vocab.clone()));
    s.set_opt("input", path_str(c.input.clone()));
    s.set_opt("output", path_str(c.output.clone()));
    s.set_opt("preset", c.preset.clone());
    s.set_opt("phase", c.phase);
    s.set_opt("mask_ratio", c.mask_ratio);
    s.set_opt("seed", c.seed);
    s.set_opt("shards", c.shards);
    s.set_opt("steps", c.steps);
    if c.grad_check {
        s.set("grad_check", true);
    }
    match &cli.command {
        Command::BuildVocab { words, max_words } => {
            s.set_opt("words", path_str(words.clone()));
            s.set_opt("max_words", *max_words);
        }
        Command::Lattice => {}
        Command::MakeInstances { format } => s.set_opt("format", format.clone()),
        Command::TrainToy {
            resume,
            batch_size,
            lr,
            warmup,
            grad_samples,
        } => {
            s.set_opt("resume", path_str(resume.clone()));
            s.set_opt("batch_size", *batch_size);
            s.set_opt("lr", *lr);
            s.set_opt("warmup", *warmup);
            s.set_opt("grad_samples", *grad_samples);
        }
        Command::AttnSummary { checkpoint, text } => {
            s.set_opt("checkpoint", path_str(checkpoint.clone()));
            s.set_opt("text", text.clone());
        }
    }
    Ok(s)
}

pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> CliResult<()> {
    let s = resolve_settings(&cli)?;
    match cli.command {
        Command::BuildVocab { .. } => commands::build_vocab(&s, out),
        Command::Lattice => commands::lattice(&s, out),
        Command::MakeInstances { .. } => commands::make_instances(&s, out),
        Command::TrainToy { .. } => commands::train_toy(&s, out),
        Command::AttnSummary { .. } => commands::attn_summary(&s, out),
    }
}
