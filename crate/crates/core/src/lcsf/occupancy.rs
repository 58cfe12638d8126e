//! Throughput as a function of the number of compute workers, for the LCSF
//! template and for synchronous load-then-compute workers.
//!
//! Extra workers hide latency but compete for the SM's register file. When
//! the block's register demand exceeds the file, the overflow spills and
//! every compute slows down by `1 + spill_penalty * overflow_fraction`.

use serde::{Deserialize, Serialize};

use super::kernel::Workload;
use super::timed::{simulate_timed, LatencyProfile, SimOptions};
use super::{LcsfError, PipelineConfig, PipelineMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceModel {
    pub threads_per_worker: usize,
    /// 32-bit registers per SM.
    pub register_file: usize,
    pub consumer_regs: usize,
    pub producer_regs: usize,
    pub sync_worker_regs: usize,
    pub max_regs_per_thread: usize,
    pub spill_penalty: f64,
}

impl Default for ResourceModel {
    fn default() -> Self {
        ResourceModel {
            threads_per_worker: 128,
            register_file: 65536,
            consumer_regs: 232,
            producer_regs: 40,
            sync_worker_regs: 232,
            max_regs_per_thread: 255,
            spill_penalty: 2.0,
        }
    }
}

impl ResourceModel {
    pub fn validate(&self) -> Result<(), LcsfError> {
        for regs in [self.consumer_regs, self.producer_regs, self.sync_worker_regs] {
            if regs > self.max_regs_per_thread {
                return Err(LcsfError::Config(format!(
                    "{regs} registers per thread exceeds the limit of {}",
                    self.max_regs_per_thread
                )));
            }
        }
        if self.threads_per_worker == 0 || self.register_file == 0 {
            return Err(LcsfError::Config("thread and register counts must be positive".into()));
        }
        if !(self.spill_penalty.is_finite() && self.spill_penalty >= 0.0) {
            return Err(LcsfError::Config("spill penalty must be non-negative".into()));
        }
        Ok(())
    }

    pub fn register_demand(&self, mode: PipelineMode, workers: usize, producers: usize) -> usize {
        let per_thread = match mode {
            PipelineMode::Lcsf => workers * self.consumer_regs + producers * self.producer_regs,
            PipelineMode::Synchronous => workers * self.sync_worker_regs,
        };
        per_thread * self.threads_per_worker
    }

    pub fn compute_scale(&self, demand: usize) -> f64 {
        let overflow = demand.saturating_sub(self.register_file) as f64 / self.register_file as f64;
        1.0 + self.spill_penalty * overflow
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupancyScenario {
    pub profile: LatencyProfile,
    /// Worker counts to sweep, ascending.
    pub workers: Vec<usize>,
    pub input_stages: usize,
    #[serde(default = "one")]
    pub producers: usize,
    /// Iterations per block; every LCSF consumer computes on each of them.
    pub iterations: usize,
    #[serde(default)]
    pub compute_units: Option<usize>,
    #[serde(default)]
    pub resources: ResourceModel,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancyPoint {
    pub workers: usize,
    pub register_demand: usize,
    pub compute_scale: f64,
    pub makespan: f64,
    pub throughput: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyCurve {
    pub mode: PipelineMode,
    pub points: Vec<OccupancyPoint>,
    pub best_workers: usize,
}

impl OccupancyCurve {
    /// True if throughput rises (weakly) to a single peak and then falls (weakly).
    pub fn is_unimodal(&self) -> bool {
        let t: Vec<f64> = self.points.iter().map(|p| p.throughput).collect();
        let peak = t.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i);
        t[..=peak].windows(2).all(|w| w[0] <= w[1]) && t[peak..].windows(2).all(|w| w[0] >= w[1])
    }

    /// True if the peak is strictly inside the swept range.
    pub fn has_interior_max(&self) -> bool {
        let i = self.points.iter().position(|p| p.workers == self.best_workers).unwrap_or(0);
        i > 0 && i + 1 < self.points.len()
    }
}

/// Runs the timing simulator once per worker count. Both modes do the same
/// total compute work at each point.
pub fn occupancy_sweep(scenario: &OccupancyScenario, mode: PipelineMode) -> Result<OccupancyCurve, LcsfError> {
    scenario.resources.validate()?;
    if scenario.workers.is_empty() || scenario.workers.contains(&0) {
        return Err(LcsfError::Config("worker counts must be positive and non-empty".into()));
    }
    let mut points = Vec::with_capacity(scenario.workers.len());
    for &w in &scenario.workers {
        let (config, workload) = match mode {
            PipelineMode::Lcsf => (
                PipelineConfig::lcsf(w, scenario.producers, scenario.input_stages),
                Workload::single_task(scenario.iterations),
            ),
            PipelineMode::Synchronous => (PipelineConfig::synchronous(w), Workload::single_task(scenario.iterations * w)),
        };
        let demand = scenario.resources.register_demand(mode, w, scenario.producers);
        let options = SimOptions {
            compute_units: scenario.compute_units,
            compute_scale: scenario.resources.compute_scale(demand),
        };
        let tl = simulate_timed(&workload, &config, &scenario.profile, &options)?;
        points.push(OccupancyPoint {
            workers: w,
            register_demand: demand,
            compute_scale: options.compute_scale,
            makespan: tl.makespan,
            throughput: tl.throughput,
        });
    }
    let best_workers = points
        .iter()
        .max_by(|a, b| a.throughput.total_cmp(&b.throughput).then(b.workers.cmp(&a.workers)))
        .map(|p| p.workers)
        .unwrap_or(0);
    Ok(OccupancyCurve {
        mode,
        points,
        best_workers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_demand_and_scale() {
        let r = ResourceModel::default();
        assert_eq!(r.register_demand(PipelineMode::Lcsf, 2, 1), (2 * 232 + 40) * 128);
        assert_eq!(r.compute_scale(65536), 1.0);
        assert_eq!(r.compute_scale(65536 * 2), 3.0);
        let bad = ResourceModel { consumer_regs: 300, ..r };
        assert!(bad.validate().is_err());
    }
}
