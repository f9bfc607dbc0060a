//! `cdnmf`: CDN log ingestion, factor-model training, evaluation, grid search
//! and cache simulation from the command line.
//!
//! Every parameter can come from a flat `key=value` config file (`--config`)
//! or from a flag; flags win. Each run writes `run-manifest-<command>.txt`
//! into the report directory, and `cdnmf run <manifest>` repeats it.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric
//! divergence.

mod commands;
mod error;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, EXIT_USAGE};
use crate::settings::{Overrides, Settings};

#[derive(Debug, Parser)]
#[command(
    name = "cdnmf",
    version,
    about = "Matrix factorization over CDN request logs"
)]
struct Cli {
    /// key=value run configuration; flags override its entries
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for splits, initialization and trial derivation [default: 42]
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Worker threads for grid search and simulation [default: 1]
    #[arg(long, global = true)]
    jobs: Option<String>,
    /// Directory for reports and run manifests [default: reports]
    #[arg(long, global = true)]
    report_dir: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse raw logs into the interaction, id-map and event files
    Ingest(IngestOpts),
    /// Split interactions and fit a factor model
    Train(TrainArgs),
    /// Report test RMSE of a saved model
    Evaluate(EvaluateArgs),
    /// Exhaustive hyper-parameter search, then retrain the winner
    Gridsearch(GridArgs),
    /// Replay request events through LRU, LFU and model-scored caches
    Simulate(SimulateArgs),
    /// Write synthetic logs and rated datasets
    Datagen(DatagenArgs),
    /// ingest, train, evaluate and simulate in one invocation
    Pipeline(PipelineArgs),
    /// Re-run the command recorded in a run manifest
    Run { manifest: PathBuf },
}

#[derive(Debug, Args)]
struct IngestOpts {
    /// Raw log file with a header row
    #[arg(long)]
    logs: Option<String>,
    /// Item column: livetv (livechannel) or vod (contentpackage)
    #[arg(long)]
    mode: Option<String>,
    /// Interaction CSV to write; id maps and events go next to it
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    delimiter: Option<String>,
    /// abort or skip on malformed lines
    #[arg(long)]
    on_error: Option<String>,
}

impl IngestOpts {
    fn overrides(self) -> Overrides {
        vec![
            ("logs", self.logs),
            ("mode", self.mode),
            ("out", self.out),
            ("delimiter", self.delimiter),
            ("on_error", self.on_error),
        ]
    }
}

#[derive(Debug, Args)]
struct HyperOpts {
    /// plain or biased
    #[arg(long)]
    variant: Option<String>,
    /// Latent factors
    #[arg(long)]
    k: Option<String>,
    /// Learning rate
    #[arg(long)]
    alpha: Option<String>,
    /// Regularization weight
    #[arg(long)]
    beta: Option<String>,
    /// Epochs
    #[arg(long)]
    iters: Option<String>,
    /// Training share of the train/test split
    #[arg(long)]
    ratio: Option<String>,
}

impl HyperOpts {
    fn overrides(self) -> Overrides {
        vec![
            ("variant", self.variant),
            ("k", self.k),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("iters", self.iters),
            ("ratio", self.ratio),
        ]
    }
}

#[derive(Debug, Args)]
struct SimOpts {
    /// Comma-separated subset of lru,lfu,mf
    #[arg(long)]
    policies: Option<String>,
    /// Comma-separated cache sizes in items
    #[arg(long)]
    capacities: Option<String>,
}

impl SimOpts {
    fn overrides(self) -> Overrides {
        vec![("policies", self.policies), ("capacities", self.capacities)]
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    interactions: Option<String>,
    #[command(flatten)]
    hyper: HyperOpts,
    /// Model file to write [default: <report-dir>/model.txt]
    #[arg(long)]
    model: Option<String>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: Option<String>,
    /// Test ratings; if absent the test split of --interactions is used
    #[arg(long)]
    test: Option<String>,
    #[arg(long)]
    interactions: Option<String>,
    #[arg(long)]
    ratio: Option<String>,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long)]
    interactions: Option<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    k_values: Option<String>,
    #[arg(long)]
    alpha_values: Option<String>,
    #[arg(long)]
    beta_values: Option<String>,
    #[arg(long)]
    iters: Option<String>,
    /// Validation share carved out of the training split
    #[arg(long)]
    val_ratio: Option<String>,
    #[arg(long)]
    ratio: Option<String>,
    /// Retrained winner [default: <report-dir>/gridsearch-model.txt]
    #[arg(long)]
    model: Option<String>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Headerless timestamp,userId,itemId file
    #[arg(long)]
    events: Option<String>,
    /// Model whose item scores drive the mf policy
    #[arg(long)]
    model: Option<String>,
    #[command(flatten)]
    sim: SimOpts,
}

#[derive(Debug, Args)]
struct DatagenArgs {
    #[arg(long)]
    n_users: Option<String>,
    #[arg(long)]
    n_items: Option<String>,
    #[arg(long)]
    zipf_s: Option<String>,
    #[arg(long)]
    k_true: Option<String>,
    #[arg(long)]
    noise_sigma: Option<String>,
    #[arg(long)]
    n_events: Option<String>,
    #[arg(long)]
    logs_out: Option<String>,
    #[arg(long)]
    ratings_out: Option<String>,
    #[arg(long)]
    truth_out: Option<String>,
    #[arg(long)]
    delimiter: Option<String>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[command(flatten)]
    ingest: IngestOpts,
    #[command(flatten)]
    hyper: HyperOpts,
    #[command(flatten)]
    sim: SimOpts,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut overrides: Overrides = vec![
        ("seed", cli.seed),
        ("jobs", cli.jobs),
        ("report_dir", cli.report_dir),
    ];
    let command = match cli.command {
        Command::Run { manifest } => return commands::replay(&manifest),
        Command::Ingest(a) => {
            overrides.extend(a.overrides());
            "ingest"
        }
        Command::Train(a) => {
            overrides.extend(a.hyper.overrides());
            overrides.extend([("interactions", a.interactions), ("model", a.model)]);
            "train"
        }
        Command::Evaluate(a) => {
            overrides.extend([
                ("model", a.model),
                ("test", a.test),
                ("interactions", a.interactions),
                ("ratio", a.ratio),
            ]);
            "evaluate"
        }
        Command::Gridsearch(a) => {
            overrides.extend([
                ("interactions", a.interactions),
                ("variant", a.variant),
                ("k_values", a.k_values),
                ("alpha_values", a.alpha_values),
                ("beta_values", a.beta_values),
                ("iters", a.iters),
                ("val_ratio", a.val_ratio),
                ("ratio", a.ratio),
                ("model", a.model),
            ]);
            "gridsearch"
        }
        Command::Simulate(a) => {
            overrides.extend(a.sim.overrides());
            overrides.extend([("events", a.events), ("model", a.model)]);
            "simulate"
        }
        Command::Datagen(a) => {
            overrides.extend([
                ("n_users", a.n_users),
                ("n_items", a.n_items),
                ("zipf_s", a.zipf_s),
                ("k_true", a.k_true),
                ("noise_sigma", a.noise_sigma),
                ("n_events", a.n_events),
                ("logs_out", a.logs_out),
                ("ratings_out", a.ratings_out),
                ("truth_out", a.truth_out),
                ("delimiter", a.delimiter),
            ]);
            "datagen"
        }
        Command::Pipeline(a) => {
            overrides.extend(a.ingest.overrides());
            overrides.extend(a.hyper.overrides());
            overrides.extend(a.sim.overrides());
            "pipeline"
        }
    };
    let mut settings = Settings::load(cli.config.as_deref(), overrides)?;
    commands::dispatch(command, &mut settings)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
