//! `neurotree` command-line driver.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use neurotree_core::DynamicBackend;

use crate::config::{Overrides, RunConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "neurotree", version, about = "Connectivity graphs, k-hop age-aware GCN and brain-tree extraction")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-subject work.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long = "dynamic-backend", global = true)]
    dynamic_backend: Option<DynamicBackend>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    khops: Option<usize>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    levels: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a planted two-class synthetic cohort.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write static and per-segment connectivity matrices.
    Fc(InOut),
    /// Write spectral convergence profiles of the k-hop operator.
    Spectral(InOut),
    /// Train the classifier.
    Train(InOut),
    /// Write per-region scores from a trained model.
    Score(WithModel),
    /// Extract trunk hierarchies and export them as DOT and JSON.
    Tree {
        #[command(flatten)]
        io: WithModel,
        /// Only this subject.
        #[arg(long)]
        subject: Option<String>,
        /// Comma-separated alpha grid for `alpha_sweep.csv`.
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<f64>>,
    },
    /// Train the age regression head.
    Age(InOut),
    /// Summarise metrics CSVs under a directory into one JSON file.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct InOut {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct WithModel {
    #[arg(long = "in")]
    input: PathBuf,
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("NEUROTREE_LOG", "error");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    if let Some(n) = g.jobs {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let mut cfg = RunConfig::load(g.config.as_deref())?;
    cfg.apply(&Overrides {
        seed: g.seed,
        backend: g.dynamic_backend,
        lambda: g.lambda,
        khops: g.khops,
        alpha: g.alpha,
        levels: g.levels,
        epochs: g.epochs,
        batch: g.batch,
        lr: g.lr,
    })?;
    match cli.command {
        Command::Synth { out } => commands::synth(&cfg, &out),
        Command::Fc(io) => commands::fc(&cfg, &io.input, &io.out),
        Command::Spectral(io) => commands::spectral(&cfg, &io.input, &io.out),
        Command::Train(io) => commands::train(&cfg, &io.input, &io.out),
        Command::Score(io) => commands::score(&io.input, &io.model, &io.out),
        Command::Tree { io, subject, sweep } => {
            commands::tree(&cfg, &io.input, &io.model, &io.out, subject.as_deref(), sweep.as_deref())
        }
        Command::Age(io) => commands::age(&cfg, &io.input, &io.out),
        Command::Report { input, out } => commands::report(&input, &out),
    }
}

fn main() -> ExitCode {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error: {}", CliError::Usage(first.to_string()).one_line());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.one_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
