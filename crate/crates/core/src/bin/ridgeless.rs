use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ridgeless::report::{cmd_diagnose, cmd_evaluate, cmd_ingest, cmd_sweep, RunConfig};
use ridgeless::Error;

#[derive(Parser)]
#[command(
    name = "ridgeless",
    version,
    about = "Ridgeless regression and factor-kernel forecasting for macro panels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, transform and filter a FRED-style CSV; write the cleaned panel.
    Ingest(Flags),
    /// Spectral tail diagnostics over a grid of split indices.
    Diagnose(Flags),
    /// Double-descent sweep for one target series.
    Sweep(Flags),
    /// Rolling out-of-sample comparison of the factor-kernel and factor models.
    Evaluate(Flags),
}

#[derive(Args)]
struct Flags {
    /// TOML file with the same keys as the flags; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<usize>>,
    #[arg(long)]
    kmax: Option<usize>,
    #[arg(long)]
    khill: Option<usize>,
    #[arg(long)]
    b_const: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    b_grid: Option<Vec<usize>>,
    /// Subsample break dates, e.g. 1984-01,2008-01.
    #[arg(long, value_delimiter = ',')]
    subsamples: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    target: Option<Vec<String>>,
    /// Replace the factor-kernel forecast with the factor model (all ratios 1).
    #[arg(long)]
    self_test: bool,
    #[arg(long, value_delimiter = ',')]
    k_grid: Option<Vec<usize>>,
    /// Largest fraction of missing observations a series may have.
    #[arg(long)]
    max_missing: Option<f64>,
    #[arg(long)]
    train_len: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    extra_n_eff: Option<Vec<usize>>,
    /// Keep the target series among the factor predictors.
    #[arg(long)]
    include_target: bool,
}

impl Flags {
    fn resolve(self) -> Result<RunConfig, Error> {
        let base = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let flags = RunConfig {
            input: self.input,
            out: self.out,
            seed: self.seed,
            window: self.window,
            horizons: self.horizons,
            kmax: self.kmax,
            khill: self.khill,
            b_const: self.b_const,
            b_grid: self.b_grid,
            subsamples: self.subsamples,
            target: self.target,
            self_test: self.self_test.then_some(true),
            k_grid: self.k_grid,
            max_missing: self.max_missing,
            train_len: self.train_len,
            extra_n_eff: self.extra_n_eff,
            include_target: self.include_target.then_some(true),
        };
        Ok(base.overlay(flags))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (flags, run): (Flags, fn(&RunConfig) -> ridgeless::Result<_>) = match cli.command {
        Command::Ingest(f) => (f, cmd_ingest),
        Command::Diagnose(f) => (f, cmd_diagnose),
        Command::Sweep(f) => (f, cmd_sweep),
        Command::Evaluate(f) => (f, cmd_evaluate),
    };
    match flags.resolve().and_then(|cfg| run(&cfg)) {
        Ok(outcome) => {
            for note in &outcome.manifest.notes {
                log::info!("{note}");
            }
            if outcome.skipped > 0 {
                eprintln!("completed with {} skipped item(s); see the manifest", outcome.skipped);
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 1 } else { 2 })
        }
    }
}
