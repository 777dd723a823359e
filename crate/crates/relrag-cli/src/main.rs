//! `relrag` — drive the whole pipeline from one binary: generate the planted
//! corpus, train, evaluate, sweep retrieval conditions, and run the training
//! ablation grid.
//!
//! Every command reads one TOML config (see [`config::RunConfig`]), folds in
//! the few flags worth overriding, and writes the resolved configuration
//! next to its outputs. Exit codes: 0 success, 1 validation error, 2 failure
//! during the work itself.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use relrag_core::infer::Strategy;

use config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "relrag", version, about = "Relevance-aware retrieval-augmented generation")]
struct Cli {
    /// TOML run configuration; omit to use defaults (then --seed is required).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; relative config paths resolve against it.
    #[arg(long, global = true, default_value = ".", value_name = "DIR")]
    out: PathBuf,
    /// Verification strategy: source_reliability or knowledge_consistency.
    #[arg(long, global = true)]
    strategy: Option<Strategy>,
    /// Blend weight for knowledge consistency, in [0, 1].
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Evaluate with only the first k retrieved documents per query.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Validate the configuration and inputs, then exit without working.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the planted-answer corpus and write it as JSONL.
    GenData,
    /// Train from scratch on the dataset's train split.
    Train,
    /// Run inference on one split and score it.
    Eval,
    /// Evaluate across document counts or retriever quality levels.
    Sweep,
    /// Train and evaluate the leave-one-out ablation grid.
    Ablate,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    let overrides =
        Overrides { seed: cli.seed, strategy: cli.strategy, lambda: cli.lambda, k: cli.k };
    let cfg = match RunConfig::resolve(cli.config.as_deref(), overrides) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::GenData => commands::gen_data(&cfg, &cli.out, cli.dry_run),
        Command::Train => commands::cmd_train(&cfg, &cli.out, cli.dry_run),
        Command::Eval => commands::cmd_eval(&cfg, &cli.out, cli.dry_run),
        Command::Sweep => commands::cmd_sweep(&cfg, &cli.out, cli.dry_run),
        Command::Ablate => commands::cmd_ablate(&cfg, &cli.out, cli.dry_run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
