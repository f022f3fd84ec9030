//! `cxrnet`: synthesize data, train, evaluate, predict and self-check.
//!
//! Exit status is 0 on success, 1 for invalid arguments or configuration
//! and 2 when a run fails.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cxrnet::model::ModelKind;
use cxrnet::verify::DEFAULT_SEEDS;

use commands::{EvalArgs, SplitChoice};
use config::Overrides;
use error::CliResult;

#[derive(Parser)]
#[command(name = "cxrnet", version, about = "Multi-label chest x-ray classifiers with label-chain decoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset: PNGs, a label CSV and an oracle sidecar.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// TOML file describing labels, dependencies and rendering.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model from a run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = parse_kind)]
        kind: Option<ModelKind>,
        #[arg(long)]
        max_updates: Option<usize>,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Run configuration whose data section and split to use.
        #[arg(long, conflicts_with = "data")]
        config: Option<PathBuf>,
        /// Dataset directory with `images/` and `labels.csv`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Defaults to `test` with --config and `all` with --data.
        #[arg(long, value_enum)]
        split: Option<SplitChoice>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict labels for images; one row per image and label.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory for predictions.csv; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Finite-difference check of every differentiable op and both models.
    Gradcheck {
        #[arg(long, default_value_t = DEFAULT_SEEDS)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Add a case with a deliberately wrong gradient.
        #[arg(long, hide = true)]
        inject_sign_bug: bool,
    },
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: cxrnet::Error| e.to_string())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth {
            out,
            n,
            resolution,
            seed,
            config,
        } => commands::synth(&out, n, resolution, seed, config.as_deref()),
        Command::Train {
            config,
            seed,
            out,
            kind,
            max_updates,
        } => commands::train_cmd(
            &config,
            &Overrides {
                seed,
                out,
                kind,
                max_updates,
            },
        ),
        Command::Eval {
            checkpoint,
            config,
            data,
            split,
            seed,
            out,
        } => commands::eval(&EvalArgs {
            checkpoint,
            config,
            data,
            split,
            seed,
            out,
        }),
        Command::Predict { checkpoint, out, images } => commands::predict(&checkpoint, &images, out.as_deref()),
        Command::Gradcheck {
            seeds,
            out,
            inject_sign_bug,
        } => commands::gradcheck(seeds, inject_sign_bug, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
