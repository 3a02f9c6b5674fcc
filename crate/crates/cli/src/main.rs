//! `eiu`: synthetic corpora, training, evaluation, ablations and corpus
//! tooling from one executable.

mod commands;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eiu_core::tensor::Precision;
use eiu_core::Error;

#[derive(Debug, Parser)]
#[command(name = "eiu", version, about = "Joint emotion and intent understanding toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Output directory; receives manifest.json and every report.
    #[arg(long, global = true, default_value = "eiu-out")]
    pub out: PathBuf,
    /// Root seed; repeated runs use seed, seed+1, ...
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `key = value` configuration file, overridden by flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub precision: Option<PrecisionArg>,
    /// Validate inputs and write only the manifest.
    #[arg(long, global = true)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    History,
    Interaction,
    Gating,
    Fl,
    Pretrain,
}

/// Flags shared by every command that builds a model.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Corpus directory holding annotations.csv, splits.csv and feature folders.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Enabled modalities as letters, e.g. `ta`.
    #[arg(long)]
    pub modalities: Option<String>,
    /// joint, emotion or intent.
    #[arg(long)]
    pub task: Option<String>,
    /// Switch off a component; repeatable.
    #[arg(long, value_enum)]
    pub ablate: Vec<Ablation>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus to the output directory.
    Synth,
    /// Pre-train the task encoders on the train split.
    Pretrain {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Train and test `n_runs` seeded models.
    Train {
        #[command(flatten)]
        model: ModelArgs,
        /// Encoder checkpoint from `pretrain`; skips per-run pre-training.
        #[arg(long)]
        pretrained: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// train, valid or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Run every ablation configuration and report the table.
    Ablate {
        #[command(flatten)]
        model: ModelArgs,
        /// Configurations trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Finite-difference audit of every block and the full model.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        points: usize,
    },
    /// Majority-vote annotation triples.
    Vote {
        /// CSV with Dia_No, Utt_No, three annotator columns and an optional expert column.
        #[arg(long)]
        csv: PathBuf,
    },
    /// Fleiss's kappa of annotation triples.
    Kappa {
        #[arg(long)]
        csv: PathBuf,
    },
    /// Dialogue-level split with label-distribution balancing.
    Split {
        /// Corpus directory or annotations CSV.
        #[arg(long)]
        corpus: PathBuf,
        /// Train:valid:test ratios.
        #[arg(long, default_value = "7:1:2")]
        ratios: String,
    },
    /// Emotion-intent co-occurrence matrix.
    Corr {
        /// Corpus directory or annotations CSV.
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Corpus statistics table.
    Stats {
        /// Corpus directory or annotations CSV.
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Convert a subtitle file to CSV.
    ParseSubs {
        #[arg(long)]
        input: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Pretrain { .. } => "pretrain",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Ablate { .. } => "ablate",
            Command::Gradcheck { .. } => "gradcheck",
            Command::Vote { .. } => "vote",
            Command::Kappa { .. } => "kappa",
            Command::Split { .. } => "split",
            Command::Corr { .. } => "corr",
            Command::Stats { .. } => "stats",
            Command::ParseSubs { .. } => "parse-subs",
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("eiu {}: {e}", cli.command.name());
            ExitCode::from(match e {
                Error::Usage(_) => 2,
                _ => 1,
            })
        }
    }
}
