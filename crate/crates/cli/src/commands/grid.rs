use std::path::PathBuf;

use anyhow::{bail, Result};
use kittensim::grid::{k_sweep, simulate_l2, KSweepScenario, L2Config, L2Scenario, OrderTraffic};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use super::read_json;
use crate::report::{fmt_f64, Report, Table};
use crate::Env;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Scenario JSON: block orders through an L2 model, or a persistent K sweep.
    scenario: PathBuf,
    /// Replace the scenario's L2 with one that never evicts.
    #[arg(long)]
    unbounded_l2: bool,
}

#[derive(Serialize)]
struct L2Results {
    name: String,
    orders: Vec<OrderTraffic>,
    /// Order with the least HBM traffic (first on ties).
    best: String,
}

pub fn run(args: &Args, env: &Env) -> Result<Report> {
    let raw: Value = read_json(&args.scenario)?;
    if raw.get("orders").is_some() {
        let mut scenario: L2Scenario = serde_json::from_value(raw)?;
        if args.unbounded_l2 {
            scenario.l2 = L2Config::unbounded(scenario.l2.line_bytes);
        }
        l2(scenario, env)
    } else if raw.get("ks").is_some() {
        if args.unbounded_l2 {
            bail!("--unbounded-l2 only applies to L2 scenarios");
        }
        ksweep(serde_json::from_value(raw)?, env)
    } else {
        bail!("{}: expected an `orders` or a `ks` field", args.scenario.display())
    }
}

fn l2(scenario: L2Scenario, env: &Env) -> Result<Report> {
    let one = |order| -> Result<OrderTraffic> {
        let fps = scenario.footprint.for_order(order)?;
        Ok(OrderTraffic {
            order: order.to_string(),
            report: simulate_l2(&fps, &scenario.l2, &scenario.replay)?,
        })
    };
    let orders: Vec<OrderTraffic> = if env.parallel() {
        env.install(|| scenario.orders.par_iter().map(one).collect::<Result<_>>())?
    } else {
        scenario.orders.iter().map(one).collect::<Result<_>>()?
    };
    let Some(best) = orders.iter().min_by_key(|o| o.report.hbm_bytes) else {
        bail!("scenario has no orders");
    };
    let best = best.order.clone();
    let mut table = Table::new(&["order", "hbm_bytes", "l2_hits", "l2_misses", "hit_rate", "write_bytes"]);
    for o in &orders {
        let r = &o.report;
        table.push(vec![
            o.order.clone(),
            r.hbm_bytes.to_string(),
            r.l2_hits.to_string(),
            r.l2_misses.to_string(),
            fmt_f64(r.hit_rate),
            r.write_bytes.to_string(),
        ]);
    }
    let results = L2Results {
        name: scenario.name.clone(),
        orders,
        best,
    };
    Report::new(&scenario, results, table)
}

fn ksweep(scenario: KSweepScenario, env: &Env) -> Result<Report> {
    let points = k_sweep(&scenario, &env.machine)?;
    let mut table = Table::new(&["k", "tasks", "per_task_s", "makespan_persistent", "makespan_relaunch", "advantage"]);
    for p in &points {
        table.push(vec![
            p.k.to_string(),
            p.tasks.to_string(),
            fmt_f64(p.per_task_s),
            fmt_f64(p.makespan_persistent),
            fmt_f64(p.makespan_relaunch),
            fmt_f64(p.advantage),
        ]);
    }
    Report::new(&scenario, serde_json::json!({ "points": points }), table)
}
