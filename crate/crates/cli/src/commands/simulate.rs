use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use kittensim::lcsf::chrome::chrome_trace;
use kittensim::lcsf::{
    occupancy_sweep, simulate_timed, LatencyProfile, OccupancyCurve, OccupancyScenario, PipelineConfig, PipelineMode, SimOptions,
    StallCause, Timeline, Workload,
};
use rayon::prelude::*;
use serde::Serialize;

use super::read_json;
use crate::report::{fmt_f64, Report, Table};
use crate::Env;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SimKernel {
    /// Profile derived from the machine unless `--profile` is given.
    Gemm,
    Attention,
    /// Also streams results through the output ring.
    Rotary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Lcsf,
    Synchronous,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long, value_enum, default_value = "gemm")]
    kernel: SimKernel,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    stages: Vec<usize>,
    /// Consumer workers (LCSF) or fused workers (synchronous).
    #[arg(long, value_delimiter = ',', default_value = "2")]
    workers: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    producers: usize,
    #[arg(long, value_enum, default_value = "lcsf")]
    mode: ModeArg,
    /// LatencyProfile JSON; required except for the GEMM kernel.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Main-loop iterations per task.
    #[arg(long, default_value_t = 64)]
    iters: usize,
    #[arg(long, default_value_t = 1)]
    tasks: usize,
    #[arg(long)]
    compute_units: Option<usize>,
    /// Run an occupancy scenario instead of the stage/worker grid.
    #[arg(long, conflicts_with_all = ["profile", "stages", "workers"])]
    occupancy: Option<PathBuf>,
    /// Write one Chrome trace per point into this directory.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
}

#[derive(Serialize)]
struct Config<'a> {
    kernel: SimKernel,
    mode: ModeArg,
    stages: &'a [usize],
    workers: &'a [usize],
    producers: usize,
    iters: usize,
    tasks: usize,
    compute_units: Option<usize>,
    profile: Option<LatencyProfile>,
}

#[derive(Serialize)]
struct Point {
    stages: usize,
    workers: usize,
    profile: LatencyProfile,
    makespan_s: Option<f64>,
    throughput: Option<f64>,
    work_throughput: Option<f64>,
    issue_utilization: Option<f64>,
    stall_fraction: Option<BTreeMap<StallCause, f64>>,
    error: Option<String>,
    #[serde(skip)]
    timeline: Option<Timeline>,
}

pub fn run(args: &Args, env: &Env) -> Result<Report> {
    if let Some(path) = &args.occupancy {
        return occupancy(path, env);
    }
    let file_profile = match &args.profile {
        Some(p) => Some(LatencyProfile::from_path(p)?),
        None if args.kernel == SimKernel::Gemm => None,
        None => bail!("--profile is required for the {:?} kernel", args.kernel),
    };
    if args.stages.is_empty() || args.workers.is_empty() {
        bail!("need at least one stage count and one worker count");
    }
    let workload = Workload {
        task_iters: vec![args.iters; args.tasks],
        ..Workload::single_task(args.iters)
    }
    .with_output_pipe(args.kernel == SimKernel::Rotary);
    let options = SimOptions {
        compute_units: args.compute_units,
        ..SimOptions::default()
    };
    let grid: Vec<(usize, usize)> = args
        .workers
        .iter()
        .flat_map(|&w| args.stages.iter().map(move |&s| (s, w)))
        .collect();
    let simulate = |&(stages, workers): &(usize, usize)| -> Point {
        // Consumers share the SM's tensor throughput, so the derived profile depends on the worker count.
        let profile = file_profile.unwrap_or_else(|| LatencyProfile::gemm_from_machine(&env.machine, workers, 4));
        let cfg = match args.mode {
            ModeArg::Lcsf => PipelineConfig::lcsf(workers, args.producers, stages).with_output_stages(stages),
            ModeArg::Synchronous => PipelineConfig::synchronous(workers),
        };
        match simulate_timed(&workload, &cfg, &profile, &options) {
            Ok(t) => Point {
                stages,
                workers,
                profile,
                makespan_s: Some(t.makespan),
                throughput: Some(t.throughput),
                work_throughput: Some(t.work_throughput),
                issue_utilization: Some(t.issue_utilization),
                stall_fraction: Some(t.stall_fraction.clone()),
                error: None,
                timeline: Some(t),
            },
            Err(e) => Point {
                stages,
                workers,
                profile,
                makespan_s: None,
                throughput: None,
                work_throughput: None,
                issue_utilization: None,
                stall_fraction: None,
                error: Some(e.to_string()),
                timeline: None,
            },
        }
    };
    let points: Vec<Point> = if env.parallel() {
        env.install(|| grid.par_iter().map(simulate).collect())
    } else {
        grid.iter().map(simulate).collect()
    };

    if let Some(dir) = &args.trace_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for p in &points {
            if let Some(t) = &p.timeline {
                let name = format!("{:?}-s{}-w{}.json", args.kernel, p.stages, p.workers).to_lowercase();
                std::fs::write(dir.join(name), serde_json::to_string(&chrome_trace(t))?)?;
            }
        }
    }

    let mut table = Table::new(&[
        "stages",
        "workers",
        "makespan_s",
        "throughput",
        "work_throughput",
        "issue_utilization",
        "error",
    ]);
    let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
    for p in &points {
        table.push(vec![
            p.stages.to_string(),
            p.workers.to_string(),
            opt(p.makespan_s),
            opt(p.throughput),
            opt(p.work_throughput),
            opt(p.issue_utilization),
            p.error.clone().unwrap_or_default(),
        ]);
    }
    let ok = points.iter().all(|p| p.error.is_none());
    let config = Config {
        kernel: args.kernel,
        mode: args.mode,
        stages: &args.stages,
        workers: &args.workers,
        producers: args.producers,
        iters: args.iters,
        tasks: args.tasks,
        compute_units: args.compute_units,
        profile: file_profile,
    };
    Ok(Report::new(config, serde_json::json!({ "points": points }), table)?.with_ok(ok))
}

#[derive(Serialize)]
struct OccupancyResults {
    lcsf: OccupancyCurve,
    synchronous: OccupancyCurve,
    lcsf_unimodal: bool,
    lcsf_interior_max: bool,
    lcsf_dominates: bool,
}

fn occupancy(path: &std::path::Path, env: &Env) -> Result<Report> {
    let scenario: OccupancyScenario = read_json(path)?;
    let (lcsf, synchronous) = env.install(|| {
        rayon::join(
            || occupancy_sweep(&scenario, PipelineMode::Lcsf),
            || occupancy_sweep(&scenario, PipelineMode::Synchronous),
        )
    });
    let (lcsf, synchronous) = (lcsf?, synchronous?);
    let mut table = Table::new(&[
        "workers",
        "lcsf_throughput",
        "synchronous_throughput",
        "lcsf_compute_scale",
        "synchronous_compute_scale",
    ]);
    for (l, s) in lcsf.points.iter().zip(&synchronous.points) {
        table.push(vec![
            l.workers.to_string(),
            fmt_f64(l.throughput),
            fmt_f64(s.throughput),
            fmt_f64(l.compute_scale),
            fmt_f64(s.compute_scale),
        ]);
    }
    let results = OccupancyResults {
        lcsf_unimodal: lcsf.is_unimodal(),
        lcsf_interior_max: lcsf.has_interior_max(),
        lcsf_dominates: lcsf
            .points
            .iter()
            .zip(&synchronous.points)
            .all(|(l, s)| l.throughput >= s.throughput),
        lcsf,
        synchronous,
    };
    Report::new(
        serde_json::json!({ "occupancy": path.display().to_string(), "scenario": scenario }),
        results,
        table,
    )
}
