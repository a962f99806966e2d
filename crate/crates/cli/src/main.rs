use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use eee_core::experiment::{self, Entry, ExperimentSpec, Mode};
use eee_core::sweep::Execution;

/// EEE frame coalescing experiments: closed forms, bounds and simulations
/// written as CSV.
#[derive(Debug, Parser)]
#[command(name = "eee-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form timer, threshold, delay, sleep and energy per grid point.
    Analytic(Common),
    /// Energy lower bound per rate and delay target.
    Bound(Common),
    /// Simulated measurements only.
    Sim(Common),
    /// Simulation next to the closed forms and the bound.
    Sweep(Common),
    /// Empirical queuing delay CDF per configuration.
    Cdf(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// `key = value` experiment file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base seed; each rate derives its own stream from it.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; 1 runs sequentially, 0 or unset uses all cores.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Extra config line, e.g. `--set tau_us=16`. Applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn build_spec(mode: Mode, args: &Common) -> Result<ExperimentSpec> {
    let mut spec = match &args.config {
        Some(path) => {
            ExperimentSpec::load(path).with_context(|| format!("reading {}", path.display()))?
        }
        None => ExperimentSpec::default(),
    };
    let mut entries = Vec::new();
    for (i, raw) in args.overrides.iter().enumerate() {
        let Some((key, value)) = raw.split_once('=') else {
            bail!("--set expects KEY=VALUE, got `{raw}`");
        };
        entries.push(Entry {
            line: i + 1,
            key: key.trim().to_string(),
            value: value.trim().to_string(),
        });
    }
    spec.apply(&entries).context("in --set")?;
    spec.mode = mode;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(out) = &args.out {
        spec.out = out.clone();
    }
    Ok(spec)
}

fn run(cli: Cli) -> Result<()> {
    let (mode, args) = match &cli.command {
        Command::Analytic(a) => (Mode::Analytic, a),
        Command::Bound(a) => (Mode::Bound, a),
        Command::Sim(a) => (Mode::Sim, a),
        Command::Sweep(a) => (Mode::Sweep, a),
        Command::Cdf(a) => (Mode::Cdf, a),
    };
    let spec = build_spec(mode, args)?;
    let (written, warnings) = experiment::run_experiment(&spec, Execution::from_jobs(args.jobs))?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    for path in written {
        println!("{}", path.display());
    }
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
