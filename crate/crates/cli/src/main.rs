//! `concord`: consensus LLM annotation, inter-run agreement scoring, and
//! chance-normalized evaluation as one pipeline binary.

mod commands;
mod config;
mod error;
mod events;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use commands::evaluate::GoldSource;
use config::{FileConfig, Overrides, Settings};
use error::CliError;
use events::{EventLog, Level};

#[derive(Parser)]
#[command(
    name = "concord",
    version,
    about = "Consensus annotation pipeline: annotate, aggregate, report, split, evaluate"
)]
struct Cli {
    /// TOML config file; flags override its keys one-for-one.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the corpus through the backend, N runs per item, resumably.
    Annotate,
    /// Collapse a run-record file into consensus labels plus a
    /// label-share report.
    Aggregate {
        #[arg(long)]
        records: PathBuf,
    },
    /// Score per-label inter-run agreement over a run-record file.
    Report {
        #[arg(long)]
        records: PathBuf,
    },
    /// Build the stratified, filtered dataset bundle.
    Split {
        #[arg(long)]
        rlp_consensus: PathBuf,
        #[arg(long)]
        mlp_consensus: PathBuf,
    },
    /// Score predictions against a gold view with a random baseline.
    Evaluate {
        #[arg(long)]
        task: String,
        #[arg(long, help = "Gold label file (item_id + label/labels lines)")]
        gold: Option<PathBuf>,
        #[arg(long, help = "Bundle directory written by split")]
        bundle: Option<PathBuf>,
        #[arg(long, help = "Bundle split to read: train, dev, or test")]
        split: Option<String>,
        #[arg(long, help = "Gold view: golden, rlp, or mlp")]
        gold_view: Option<String>,
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long, help = "Replay a known F1 instead of scoring files")]
        f1: Option<f64>,
        #[arg(long, help = "Replay a known random baseline")]
        f1_random: Option<f64>,
        #[arg(long, help = "Also estimate the baseline by Monte Carlo")]
        mc_repeats: Option<u32>,
        #[arg(long)]
        mc_seed: Option<u64>,
    },
    /// Check the analytic baseline against a Monte Carlo estimate.
    McVerify {
        #[arg(long)]
        task: String,
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        gold_view: Option<String>,
        #[arg(long)]
        repeats: Option<u32>,
        #[arg(long)]
        mc_seed: Option<u64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let settings = Settings::new(file, cli.overrides);
    let log = EventLog::new(settings.log_level()?);

    match cli.command {
        Command::Annotate => commands::annotate::run(&settings, &log),
        Command::Aggregate { records } => commands::aggregate::run(&settings, &log, &records),
        Command::Report { records } => commands::report::run(&settings, &log, &records),
        Command::Split {
            rlp_consensus,
            mlp_consensus,
        } => commands::split::run(&settings, &log, &rlp_consensus, &mlp_consensus),
        Command::Evaluate {
            task,
            gold,
            bundle,
            split,
            gold_view,
            pred,
            f1,
            f1_random,
            mc_repeats,
            mc_seed,
        } => {
            let source = GoldSource {
                gold,
                bundle,
                split,
                gold_view,
            };
            commands::evaluate::run(
                &settings,
                &log,
                &task,
                &source,
                pred.as_deref(),
                f1,
                f1_random,
                mc_repeats,
                mc_seed,
            )
        }
        Command::McVerify {
            task,
            gold,
            bundle,
            split,
            gold_view,
            repeats,
            mc_seed,
        } => {
            let source = GoldSource {
                gold,
                bundle,
                split,
                gold_view,
            };
            commands::evaluate::mc_verify(&settings, &log, &task, &source, repeats, mc_seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // The log may not have been constructible (config errors), so
            // build a bare one for the final event.
            let log = EventLog::new(Level::Error);
            log.error(
                "fatal",
                json!({ "kind": err.kind(), "message": err.message() }),
            );
            ExitCode::from(err.exit_code())
        }
    }
}
