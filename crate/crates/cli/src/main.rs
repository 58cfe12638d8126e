use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use kittensim::machine::{preset_h100, Calibration, MachineParams};

mod commands;
mod report;

use commands::{audit, cost, grid, run_kernel, simulate};
use report::{emit, render, Format, ReportEnvelope};

#[derive(Debug, Parser)]
#[command(name = "kittensim", version, about = "Tile-kernel layout, pipeline, grid and cost studies")]
struct Cli {
    #[arg(long, value_enum, default_value = "json", global = true)]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0, global = true)]
    seed: u64,
    /// Shard independent points over this many threads.
    #[arg(long, global = true)]
    parallel: Option<usize>,
    /// Calibration file completing the H100 constants.
    #[arg(long, env = "KITTENSIM_CALIBRATION", global = true)]
    calibration: Option<PathBuf>,
    /// Omit wall time so reports are byte-identical across runs.
    #[arg(long, global = true)]
    no_wall_time: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Bank conflicts of one access pattern on a shared-memory layout.
    AuditLayout(audit::Args),
    /// Runs a kernel functionally and compares it with its fp64 oracle.
    RunKernel(run_kernel::Args),
    /// Timed pipeline simulation over stage and worker counts.
    Simulate(simulate::Args),
    /// L2 traffic of block orders, or persistent vs relaunch makespans.
    Grid(grid::Args),
    /// Max-plus-overhead cost estimate.
    Cost(cost::Args),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::AuditLayout(_) => "audit-layout",
            Command::RunKernel(_) => "run-kernel",
            Command::Simulate(_) => "simulate",
            Command::Grid(_) => "grid",
            Command::Cost(_) => "cost",
        }
    }
}

pub struct Env {
    pub seed: u64,
    pub machine: MachineParams,
    pool: Option<rayon::ThreadPool>,
}

impl Env {
    /// Runs `f` inside the `--parallel` pool, or on the calling thread.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match &self.pool {
            Some(pool) => pool.install(f),
            None => f(),
        }
    }

    pub fn parallel(&self) -> bool {
        self.pool.is_some()
    }
}

fn run(cli: Cli) -> Result<bool> {
    let machine = match &cli.calibration {
        Some(path) => {
            let cal = Calibration::from_path(path).with_context(|| format!("loading calibration {}", path.display()))?;
            let m = MachineParams::h100_with(&cal);
            m.validate()?;
            m
        }
        None => preset_h100(),
    };
    let pool = match cli.parallel {
        Some(0) => anyhow::bail!("--parallel needs at least one thread"),
        Some(n) => Some(rayon::ThreadPoolBuilder::new().num_threads(n).build()?),
        None => None,
    };
    let env = Env {
        seed: cli.seed,
        machine,
        pool,
    };
    let start = Instant::now();
    let report = match &cli.command {
        Command::AuditLayout(a) => audit::run(a, &env)?,
        Command::RunKernel(a) => run_kernel::run(a, &env)?,
        Command::Simulate(a) => simulate::run(a, &env)?,
        Command::Grid(a) => grid::run(a, &env)?,
        Command::Cost(a) => cost::run(a, &env)?,
    };
    let envelope = ReportEnvelope {
        command: cli.command.name(),
        tool_version: env!("CARGO_PKG_VERSION"),
        seed: cli.seed,
        config: &report.config,
        results: &report.results,
        wall_time_s: (!cli.no_wall_time).then(|| start.elapsed().as_secs_f64()),
    };
    emit(&render(&envelope, &report.table, cli.format)?, cli.out.as_deref())?;
    Ok(report.ok)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: one or more checks failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
