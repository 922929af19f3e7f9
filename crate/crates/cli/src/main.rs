//! Batch front-end: train, search, replay, detect and sweep, each writing
//! its results and a run manifest into `--out`.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{AgentKind, Common, DetectArgs, DetectorKind, SweepArgs};

#[derive(Debug, Parser)]
#[command(name = "cachegame", version, about = "Cache guessing-game experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Config file, or `preset:NAME` for a built-in config.
    #[arg(long, global = true)]
    config: Option<String>,

    /// Seed for secrets and training; defaults to the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Parallel rollout workers; more than one gives up bitwise determinism.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train an agent and extract its attack traces.
    Train {
        #[arg(long, value_enum, default_value_t = AgentKind::Tabular)]
        agent: AgentKind,
        #[arg(long, default_value_t = 2_000_000)]
        max_steps: u64,
    },
    /// Enumerate fixed attack sequences up to a length.
    Search {
        /// Longest sequence, counting the final guess.
        #[arg(long)]
        max_len: usize,
    },
    /// Replay a trace file and report its accuracy.
    Replay {
        traces: PathBuf,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// Run a detector over one replay of a trace file.
    Detect {
        traces: PathBuf,
        #[arg(long, value_enum)]
        detector: DetectorKind,
        #[arg(long, default_value_t = 20)]
        max_lag: usize,
        #[arg(long, default_value_t = 0.75)]
        threshold: f64,
    },
    /// Train once per value of a config key or `reward_scale`.
    Sweep {
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        values: Vec<f64>,
        #[arg(long, value_enum, default_value_t = AgentKind::Tabular)]
        agent: AgentKind,
        #[arg(long, default_value_t = 2_000_000)]
        max_steps: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = Common { config: cli.config, seed: cli.seed, out: cli.out, workers: cli.workers.max(1) };
    let res = match &cli.command {
        Command::Train { agent, max_steps } => commands::train(&common, *agent, *max_steps),
        Command::Search { max_len } => commands::search(&common, *max_len),
        Command::Replay { traces, trials } => commands::replay(&common, traces, *trials),
        Command::Detect { traces, detector, max_lag, threshold } => commands::detect(
            &common,
            traces,
            &DetectArgs { detector: *detector, max_lag: *max_lag, threshold: *threshold },
        ),
        Command::Sweep { param, values, agent, max_steps } => commands::sweep(
            &common,
            &SweepArgs { param: param.clone(), values: values.clone(), agent: *agent, max_steps: *max_steps },
        ),
    };
    match res {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
