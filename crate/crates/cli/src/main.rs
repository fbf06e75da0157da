use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use uotpool::experiments::{run_command, Command, ExperimentConfig};

// clap needs a literal for after_long_help; kept in sync with SCHEMA_HELP by a test.
macro_rules! schema_help {
    () => {
        "\
approx:      approx_<target>_<solver>.csv  row,col,truth,plan
             approx_summary.csv  target,solver,plan_max_abs_error,pooled_max_abs_error,total_mass,has_nan
stability:   stability.csv  solver,reg,alpha0,alpha12,has_nan,total_mass
convergence: convergence.csv  solver,reg,k_iters,objective
bench:       bench.csv  method,k_iters,mean_ms,std_ms,median_ms
train:       train.csv  epoch,loss,status"
    };
}

#[derive(Debug, Parser)]
#[command(
    name = "uotpool",
    version,
    about = "Experiments for global pooling as unbalanced optimal transport",
    after_long_help = concat!("Output files (CSV, with a manifest.json alongside):\n", schema_help!())
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// JSON config; missing keys take defaults, unknown keys are rejected
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the config seed
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Output directory; overrides the config's out_dir
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Cmd {
    /// Plans of the mean, max and attention configurations vs. ground truth
    Approx,
    /// NaN and total-mass grid over (alpha0, alpha1 = alpha2)
    Stability,
    /// UOT objective against the number of unrolled modules
    Convergence,
    /// Runtime of each pooling method on a batch
    Bench,
    /// Loss trace of a UOT pooling layer trained on a synthetic task
    Train,
}

impl From<Cmd> for Command {
    fn from(cmd: Cmd) -> Self {
        match cmd {
            Cmd::Approx => Command::Approx,
            Cmd::Stability => Command::Stability,
            Cmd::Convergence => Command::Convergence,
            Cmd::Bench => Command::Bench,
            Cmd::Train => Command::Train,
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli.out.unwrap_or_else(|| PathBuf::from(&config.out_dir));
    let command = Command::from(cli.command);
    let manifest = run_command(command, &config, &out)
        .with_context(|| format!("{command} into {}", out.display()))?;
    for file in &manifest.files {
        println!("{}", out.join(file).display());
    }
    println!("{}", out.join("manifest.json").display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
