//! `cams`: capacity-MSE trade-off sweeps, beam patterns, Monte Carlo checks and
//! single solves from a TOML run configuration.
//!
//! Exit codes: 0 success, 1 configuration/usage/IO error, 2 some point not
//! solved to tolerance, 3 covariance band too tight, 4 infeasible MSE target.

// `!(x > 0.0)` is the NaN-rejecting form used for input checks throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use cams::model::parse_f64;
use clap::{Parser, Subcommand};

use crate::commands::Ctx;
use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "cams", version, about = "Capacity-MSE trade-off for joint communication and sensing")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trace the capacity-MSE curve: curve.csv and q_opt_<i>.json.
    Sweep { config: PathBuf },
    /// Beam patterns at the endpoints and the given MSE targets: beampattern.csv.
    Beampattern {
        config: PathBuf,
        /// Comma-separated MSE targets.
        #[arg(long, value_delimiter = ',', value_parser = parse_f64)]
        delta: Vec<f64>,
    },
    /// Monte Carlo check of the asymptotic MSE and covariance concentration: mc_summary.json.
    Simulate { config: PathBuf },
    /// Solve one point and print it as JSON. `--delta inf` gives the capacity point.
    Solve {
        config: PathBuf,
        #[arg(long, value_parser = parse_f64, allow_hyphen_values = true)]
        delta: f64,
    },
}

fn load(path: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Ok(seed) = std::env::var("CAMS_SEED") {
        cfg.seed = seed.trim().parse().with_context(|| format!("CAMS_SEED={seed:?} is not a u64"))?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<u8> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let ctx =
        |cfg: &RunConfig| Ctx { out_dir: cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone()), quiet: cli.quiet };
    match &cli.command {
        Command::Sweep { config } => {
            let cfg = load(config)?;
            commands::sweep(&cfg, &ctx(&cfg))
        }
        Command::Beampattern { config, delta } => {
            let cfg = load(config)?;
            commands::beampattern(&cfg, delta, &ctx(&cfg))
        }
        Command::Simulate { config } => {
            let cfg = load(config)?;
            commands::simulate(&cfg, &ctx(&cfg))
        }
        Command::Solve { config, delta } => {
            let cfg = load(config)?;
            commands::solve(&cfg, *delta, &mut std::io::stdout().lock())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<cams::Error>() {
        Some(cams::Error::BandTooTight { .. }) => 3,
        Some(cams::Error::Infeasible { .. }) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
