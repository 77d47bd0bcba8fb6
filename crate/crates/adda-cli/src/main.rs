//! Batch front end for the sampler library. Four subcommands: `run`
//! executes a chain and writes draws.csv plus run.json, `metrics`
//! compares two draw files, `gen` produces synthetic datasets, and
//! `check-lme` evaluates the mixed-model ergodicity conditions.
//!
//! Exit codes: 0 success, 1 invalid input (bad flags, bad config, bad
//! file schema), 2 runtime failure (numeric breakdown, dead worker, io).

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

#[derive(Parser)]
#[command(name = "adda", version, about = "Asynchronous data augmentation samplers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sampler; writes draws.csv and run.json into --out.
    Run(RunArgs),
    /// Compare a chain against its parent; writes accuracy.csv and se.csv.
    Metrics(MetricsArgs),
    /// Generate a synthetic dataset (or engineer ratings features).
    Gen(GenArgs),
    /// Check the mixed-model ergodicity conditions for a data/prior pair.
    CheckLme(CheckLmeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON file holding any of the run options; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// One of: logistic, lasso, lme.
    #[arg(long)]
    model: Option<String>,
    /// Input data CSV in the model's schema.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Prior or hyperparameter JSON; model defaults when omitted.
    #[arg(long)]
    prior: Option<PathBuf>,
    /// Number of workers; the data is partitioned into k shards.
    #[arg(long)]
    k: Option<usize>,
    /// Fraction of workers the manager waits for, in (0, 1].
    #[arg(long)]
    r: Option<f64>,
    /// Probability of forcing a full synchronization, in [0, 1].
    #[arg(long)]
    epsilon: Option<f64>,
    /// Iterations to run; one recorded draw each.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// "virtual" (deterministic replay) or "live" (real worker threads).
    #[arg(long)]
    mode: Option<String>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra recordings: "drift", or "prob:x1,...,xp" for the logistic
    /// model's predicted probability at a covariate point. Repeatable.
    #[arg(long)]
    record: Vec<String>,
    /// Pin the mixed model's loading matrix to the identity.
    #[arg(long)]
    fix_gamma: bool,
}

#[derive(Args)]
struct MetricsArgs {
    /// Draws from the chain under study.
    #[arg(long = "adda")]
    adda_draws: PathBuf,
    /// Draws from the synchronous parent chain.
    #[arg(long)]
    parent: PathBuf,
    /// Comma-separated prefix lengths to evaluate at, e.g. 1000,5000.
    #[arg(long)]
    grid: String,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    /// One of: logistic, lasso, lme, movielens.
    #[arg(long)]
    model: String,
    /// Observations (logistic) or coordinates (lasso, where n = p).
    #[arg(long)]
    n: Option<usize>,
    /// Subjects (lme).
    #[arg(long)]
    m: Option<usize>,
    /// Rows per subject (lme).
    #[arg(long)]
    subject_rows: Option<usize>,
    /// Ratings CSV to engineer features from (movielens).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct CheckLmeArgs {
    /// Mixed-model data CSV (subject_id, y, x1..xp, z1..zq).
    #[arg(long)]
    data: PathBuf,
    /// Prior JSON {M, a, V_alpha, W, s}; standard prior when omitted.
    #[arg(long)]
    prior: Option<PathBuf>,
    /// Selection probability the conditions are checked at, in (0, 1].
    #[arg(long)]
    epsilon: f64,
}

fn main() {
    let cli = Cli::try_parse().unwrap_or_else(|err| {
        let code = match err.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
            _ => 1,
        };
        let _ = err.print();
        std::process::exit(code);
    });
    let result = match cli.command {
        Command::Run(args) => commands::run(args),
        Command::Metrics(args) => commands::metrics(args),
        Command::Gen(args) => commands::gen(args),
        Command::CheckLme(args) => commands::check_lme(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(if err.is_validation() { 1 } else { 2 });
    }
}
