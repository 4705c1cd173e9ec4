//! `mtsp`: dataset generation, training, solving and reporting.
//!
//! Every field of the JSON config can be overridden with a flag of the same
//! dotted name, e.g. `--worker.epochs 2` or `--meta.sa.population 20`.

mod commands;
mod config;
mod records;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::{split_overrides, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "mtsp", version, about = "Solver laboratory for the multi-vehicle TSP with time windows and rejections")]
struct Cli {
    /// JSON config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Sa,
    Ts,
    Ba,
    Kmeans,
    Random,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write `count` random instances as newline-delimited JSON.
    Gen { out: PathBuf },
    /// Train a routing policy; writes a checkpoint and a training curve.
    TrainWorker,
    /// Train an assignment policy against a frozen worker.
    TrainManager,
    /// Solve a dataset with the manager and worker checkpoints.
    Solve { dataset: PathBuf },
    /// Solve a dataset with a classical baseline.
    Baseline { dataset: PathBuf, method: Method },
    /// Exact results for small instances.
    Oracle { dataset: PathBuf },
    /// Join record files into one table with per-instance gaps.
    Compare {
        #[arg(required = true)]
        records: Vec<PathBuf>,
    },
    /// Finite-difference checks of every differentiable operation.
    Gradcheck,
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> anyhow::Result<()> {
    let (args, overrides) = split_overrides(std::env::args().collect(), &["config", "help", "version"])?;
    let cli = Cli::try_parse_from(args).map_err(|e| {
        if e.use_stderr() {
            anyhow::anyhow!("{e}")
        } else {
            // --help and --version
            let _ = e.print();
            std::process::exit(0)
        }
    })?;
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &overrides)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    match cli.command {
        Command::Gen { out } => commands::gen(&cfg, &out),
        Command::TrainWorker => commands::train_worker(&cfg),
        Command::TrainManager => commands::train_manager(&cfg),
        Command::Solve { dataset } => commands::solve(&cfg, &dataset),
        Command::Baseline { dataset, method } => commands::baseline(&cfg, &dataset, method),
        Command::Oracle { dataset } => commands::oracle(&cfg, &dataset),
        Command::Compare { records } => commands::compare(&cfg, &records),
        Command::Gradcheck => commands::gradcheck(&cfg),
    }
}
