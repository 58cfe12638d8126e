use serde::{Deserialize, Serialize};

use super::GridError;
use crate::machine::{estimate_cost, MachineParams, WorkProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistentReport {
    /// Task ids each SM runs under the persistent grid, in order.
    pub per_sm: Vec<Vec<usize>>,
    pub waves: usize,
    pub makespan_persistent: f64,
    pub makespan_relaunch: f64,
}

/// Compares one long-lived block per SM (task `i * num_sms + sm` on SM `sm`,
/// one setup each) with launching a fresh block per task in waves of
/// `num_sms` (one setup per task).
pub fn persistent_assign(num_tasks: usize, num_sms: usize, per_task_s: f64, setup_s: f64) -> Result<PersistentReport, GridError> {
    if num_tasks == 0 || num_sms == 0 {
        return Err(GridError::Invalid("task and SM counts must be positive".into()));
    }
    if !(per_task_s.is_finite() && per_task_s > 0.0 && setup_s.is_finite() && setup_s >= 0.0) {
        return Err(GridError::Invalid(format!(
            "per-task time must be positive and setup non-negative, got {per_task_s} and {setup_s}"
        )));
    }
    let per_sm: Vec<Vec<usize>> = (0..num_sms).map(|sm| (sm..num_tasks).step_by(num_sms).collect()).collect();
    let longest = per_sm.iter().map(Vec::len).max().unwrap_or(0);
    let waves = num_tasks.div_ceil(num_sms);
    Ok(PersistentReport {
        per_sm,
        waves,
        makespan_persistent: setup_s + longest as f64 * per_task_s,
        makespan_relaunch: waves as f64 * (setup_s + per_task_s),
    })
}

/// A GEMM whose reduction length varies; shorter K means shorter tasks and a
/// larger share of time spent on launch setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KSweepScenario {
    pub m: u64,
    pub n: u64,
    pub block_m: u64,
    pub block_n: u64,
    pub ks: Vec<u64>,
    /// Defaults to the machine's block setup cost.
    #[serde(default)]
    pub setup_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepPoint {
    pub k: u64,
    pub tasks: usize,
    pub per_task_s: f64,
    pub makespan_persistent: f64,
    pub makespan_relaunch: f64,
    /// relaunch / persistent.
    pub advantage: f64,
}

/// Per-task time comes from the cost model on one SM's share of the machine.
pub fn k_sweep(scenario: &KSweepScenario, machine: &MachineParams) -> Result<Vec<KSweepPoint>, GridError> {
    if scenario.block_m == 0
        || scenario.block_n == 0
        || !scenario.m.is_multiple_of(scenario.block_m)
        || !scenario.n.is_multiple_of(scenario.block_n)
    {
        return Err(GridError::Invalid("output blocks must tile the matrix".into()));
    }
    let sms = machine.num_sms as usize;
    let per_sm = machine.scaled_rates(1.0 / sms as f64);
    let setup = scenario.setup_s.unwrap_or(machine.block_setup_cost);
    let tasks = ((scenario.m / scenario.block_m) * (scenario.n / scenario.block_n)) as usize;
    scenario
        .ks
        .iter()
        .map(|&k| {
            let work = WorkProfile {
                num_setups: 0.0,
                ..WorkProfile::gemm_bf16(scenario.block_m, scenario.block_n, k)
            };
            let per_task = estimate_cost(&work, &per_sm)
                .map_err(|e| GridError::Invalid(e.to_string()))?
                .overall;
            let r = persistent_assign(tasks, sms, per_task, setup)?;
            Ok(KSweepPoint {
                k,
                tasks,
                per_task_s: per_task,
                makespan_persistent: r.makespan_persistent,
                makespan_relaunch: r.makespan_relaunch,
                advantage: r.makespan_relaunch / r.makespan_persistent,
            })
        })
        .collect()
}
