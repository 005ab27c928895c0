//! Command-line front end: argument parsing, config resolution and
//! dispatch to the verbs in [`commands`].

pub mod commands;
pub mod config;
pub mod tables;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use srevo_core::datagen::CorpusKind;
use srevo_core::stats::Alternative;

use crate::commands::RunDir;
use crate::config::{Overrides, Preset, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "srevo",
    version,
    about = "Symbolic regression by neuroevolution of a pretrained data-to-equation model"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML file with a preset and parameter overrides.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "N")]
    pub trials: Option<usize>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Run directory shared by all verbs (default `srevo-run`).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads; 1 gives a fully sequential run.
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Tail {
    TwoSided,
    Less,
    Greater,
}

impl From<Tail> for Alternative {
    fn from(t: Tail) -> Self {
        match t {
            Tail::TwoSided => Alternative::TwoSided,
            Tail::Less => Alternative::Less,
            Tail::Greater => Alternative::Greater,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a corpus: pretrain, evolve, test or unseen-test.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kind: CorpusKind,
    },
    /// Pretrain the model pool, resuming an interrupted pool.
    Pretrain {
        #[command(flatten)]
        common: Common,
    },
    /// Run evolution trials, resuming interrupted ones.
    Evolve {
        #[command(flatten)]
        common: Common,
    },
    /// Score checkpoints, trial champions or the pool on a benchmark corpus.
    Test {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "test")]
        kind: CorpusKind,
        /// Checkpoint to test; may be repeated.
        #[arg(long, value_name = "PATH")]
        checkpoint: Vec<PathBuf>,
    },
    /// Summarize completed trials: curves, fronts and rank tests.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "two-sided")]
        alternative: Tail,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenData { common, .. }
            | Command::Pretrain { common }
            | Command::Evolve { common }
            | Command::Test { common, .. }
            | Command::Report { common, .. } => common,
        }
    }
}

fn resolve(common: &Common) -> Result<(RunConfig, RunDir)> {
    let text = match &common.config {
        Some(p) => Some(std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    let flags = Overrides {
        preset: common.preset,
        seed: common.seed,
        trials: common.trials,
    };
    let (cfg, file_out) = config::resolve(text.as_deref(), &flags)?;
    let out = common
        .out
        .clone()
        .or(file_out.map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("srevo-run"));
    Ok((cfg, RunDir(out)))
}

pub fn run(cli: Cli) -> Result<()> {
    let common = cli.command.common();
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let (cfg, run) = resolve(common)?;
    match &cli.command {
        Command::GenData { kind, .. } => commands::gen_data(&cfg, &run, *kind).map(drop),
        Command::Pretrain { .. } => commands::pretrain(&cfg, &run).map(drop),
        Command::Evolve { .. } => commands::evolve(&cfg, &run),
        Command::Test { kind, checkpoint, .. } => commands::test(&cfg, &run, *kind, checkpoint).map(drop),
        Command::Report { alternative, .. } => commands::report(&cfg, &run, (*alternative).into()),
    }
}
