//! `accel-sketch`: experiment harness emitting CSV trajectories.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::Settings;

#[derive(Parser)]
#[command(name = "accel-sketch", version, about = "Races plain and accelerated sketch-and-project methods")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML settings file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Subcommand)]
enum Command {
    /// Print analytic and (for small n) oracle spectral constants.
    Estimate(Common),
    /// Matrix inversion races.
    Invert(Common),
    /// Linear-system races with x* = (1, …, 1).
    Solve(Common),
    /// Classic versus accelerated BFGS on a logistic-regression dataset.
    Optimize(Common),
    /// 7×7 sensitivity grid around the base (μ, ν).
    Grid(Common),
}

fn thread_count() -> Option<usize> {
    let raw = std::env::var("ACCEL_SKETCH_THREADS").ok()?;
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => Some(n),
        _ => {
            log::warn!("ignoring ACCEL_SKETCH_THREADS={raw}");
            None
        }
    }
}

fn run(cli: Cli) -> Result<usize> {
    let (common, f): (&Common, fn(&Settings) -> Result<commands::Output>) = match &cli.command {
        Command::Estimate(c) => (c, commands::cmd_estimate),
        Command::Invert(c) => (c, commands::cmd_invert),
        Command::Solve(c) => (c, commands::cmd_solve),
        Command::Optimize(c) => (c, commands::cmd_optimize),
        Command::Grid(c) => (c, commands::cmd_grid),
    };
    let settings = match &common.config {
        Some(path) => Settings::load(path)?.overlay(&common.settings),
        None => common.settings.clone(),
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count() {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("starting worker pool")?;
    let out = pool.install(|| f(&settings))?;
    match &settings.run.out {
        Some(path) => std::fs::write(path, &out.csv).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(out.csv.as_bytes())?,
    }
    Ok(out.failures)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(failed) => {
            eprintln!("error: {failed} run(s) failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
