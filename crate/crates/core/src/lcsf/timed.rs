//! Discrete-event timing simulation of one block's LCSF schedule.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::kernel::{GlobalSet, KernelSpec, Workload};
use super::schedule::{Action, ActionKind, BarrierKind, Schedule, WorkerId};
use super::trace::Trace;
use super::{LcsfError, PipelineConfig};
use crate::machine::MachineParams;

/// Per-action latencies in seconds. Loads and stores are asynchronous under
/// the LCSF template: the producer is busy only for `issue_s` and the copy
/// lands `load_s` (or `store_s`) later.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyProfile {
    pub load_s: f64,
    pub compute_s: f64,
    #[serde(default)]
    pub store_s: f64,
    #[serde(default)]
    pub finish_s: f64,
    #[serde(default)]
    pub setup_s: f64,
    #[serde(default)]
    pub issue_s: f64,
    /// Work represented by one compute action (for example FLOPs).
    #[serde(default = "one")]
    pub work_per_compute: f64,
}

fn one() -> f64 {
    1.0
}

impl LatencyProfile {
    pub fn new(load_s: f64, compute_s: f64) -> Self {
        LatencyProfile {
            load_s,
            compute_s,
            store_s: 0.0,
            finish_s: 0.0,
            setup_s: 0.0,
            issue_s: 0.0,
            work_per_compute: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), LcsfError> {
        for (name, v) in [("load_s", self.load_s), ("compute_s", self.compute_s)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(LcsfError::Profile(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("store_s", self.store_s),
            ("finish_s", self.finish_s),
            ("setup_s", self.setup_s),
            ("issue_s", self.issue_s),
            ("work_per_compute", self.work_per_compute),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(LcsfError::Profile(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, LcsfError> {
        let p: LatencyProfile = serde_json::from_str(text).map_err(|e| LcsfError::Profile(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, LcsfError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| LcsfError::Profile(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    /// Latencies of one GEMM main-loop iteration with 64x64 bf16 tiles,
    /// `consumers` 64-row output blocks and `n_tiles` 64-column output blocks,
    /// derived from one SM's share of HBM bandwidth and tensor throughput.
    pub fn gemm_from_machine(machine: &MachineParams, consumers: usize, n_tiles: usize) -> Self {
        const T: f64 = 64.0;
        let sms = machine.num_sms as f64;
        let hbm_per_sm = machine.hbm_bw / sms;
        let tensor_per_sm = machine.pipeline_throughputs.tensor / sms;
        let (c, n) = (consumers as f64, n_tiles as f64);
        let input_bytes = (c + n) * T * T * 2.0;
        let flops_per_consumer = 2.0 * T * (T * n) * T;
        LatencyProfile {
            load_s: input_bytes / hbm_per_sm,
            // Consumers share the SM's tensor cores.
            compute_s: flops_per_consumer * c / tensor_per_sm,
            store_s: 0.0,
            finish_s: T * (T * n) * 2.0 / hbm_per_sm,
            setup_s: 0.0,
            issue_s: 0.0,
            work_per_compute: flops_per_consumer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// At most this many compute actions run at once (None: unlimited).
    pub compute_units: Option<usize>,
    /// Multiplies every compute latency.
    pub compute_scale: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            compute_units: None,
            compute_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanKind {
    Setup,
    Load,
    Compute,
    Store,
    Finish,
    Stall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StallCause {
    /// Consumer waiting for a load to land.
    InputWait,
    /// Producer waiting for consumers to release an input slot.
    SlotFree,
    /// Producer waiting for consumer outputs.
    OutputWait,
    /// Consumer waiting for a store to drain an output slot.
    OutputSlotFree,
    /// Consumer waiting for a free compute unit.
    ComputeUnit,
}

impl From<BarrierKind> for StallCause {
    fn from(b: BarrierKind) -> Self {
        match b {
            BarrierKind::InputsArrived => StallCause::InputWait,
            BarrierKind::InputsFinished => StallCause::SlotFree,
            BarrierKind::OutputsArrived => StallCause::OutputWait,
            BarrierKind::OutputsFinished => StallCause::OutputSlotFree,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub kind: SpanKind,
    pub start: f64,
    pub end: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub task: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cause: Option<StallCause>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerTimeline {
    pub worker: WorkerId,
    pub spans: Vec<Span>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub makespan: f64,
    pub compute_events: usize,
    /// Compute actions per second.
    pub throughput: f64,
    /// `work_per_compute` units per second.
    pub work_throughput: f64,
    /// Fraction of worker-time spent running actions.
    pub issue_utilization: f64,
    /// Fraction of worker-time spent stalled, by cause.
    pub stall_fraction: BTreeMap<StallCause, f64>,
    pub workers: Vec<WorkerTimeline>,
    /// Asynchronous copies from issue to landing.
    pub async_ops: Vec<Span>,
    pub trace: Trace,
}

#[derive(Debug, Clone, Copy)]
enum EventKind {
    Complete { w: usize, action: Action, detached: bool },
    IssueDone { w: usize },
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // Reversed for a min-heap on (time, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

fn span_kind(kind: ActionKind) -> SpanKind {
    match kind {
        ActionKind::Setup => SpanKind::Setup,
        ActionKind::Load => SpanKind::Load,
        ActionKind::Compute => SpanKind::Compute,
        ActionKind::Store => SpanKind::Store,
        ActionKind::Finish => SpanKind::Finish,
    }
}

/// Simulates one block running `workload` under `config`.
pub fn simulate_timed(
    workload: &Workload,
    config: &PipelineConfig,
    profile: &LatencyProfile,
    options: &SimOptions,
) -> Result<Timeline, LcsfError> {
    profile.validate()?;
    let out_bytes = if workload.output_pipe { workload.output_block_bytes } else { 0 };
    config.validate(workload.input_block_bytes, out_bytes, 0)?;
    if !(options.compute_scale.is_finite() && options.compute_scale > 0.0) {
        return Err(LcsfError::Profile(format!(
            "compute scale must be positive, got {}",
            options.compute_scale
        )));
    }
    if options.compute_units == Some(0) {
        return Err(LcsfError::Config("compute_units must be at least 1".into()));
    }
    let mut schedule = Schedule::new(config, workload)?;
    let n = schedule.num_workers();
    let mut spans: Vec<Vec<Span>> = vec![Vec::new(); n];
    let mut async_ops = Vec::new();
    let mut issuing = vec![false; n];
    let mut stalls: Vec<Option<(f64, StallCause)>> = vec![None; n];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut active_computes = 0usize;
    let mut compute_events = 0usize;
    let mut t = 0.0f64;
    let mut makespan = 0.0f64;

    let close_stall = |spans: &mut Vec<Span>, stall: &mut Option<(f64, StallCause)>, now: f64| {
        if let Some((start, cause)) = stall.take() {
            if now > start {
                spans.push(Span {
                    kind: SpanKind::Stall,
                    start,
                    end: now,
                    task: None,
                    iter: None,
                    cause: Some(cause),
                });
            }
        }
    };

    loop {
        for w in 0..n {
            if schedule.is_busy(w) || issuing[w] {
                continue;
            }
            let action = match schedule.pick(w) {
                Ok(Some(a)) => {
                    let unit_free = options.compute_units.is_none_or(|u| active_computes < u);
                    if a.kind == ActionKind::Compute && !unit_free {
                        Err(StallCause::ComputeUnit)
                    } else {
                        Ok(a)
                    }
                }
                Ok(None) => continue,
                Err(wait) => Err(StallCause::from(wait.barrier)),
            };
            let action = match action {
                Ok(a) => a,
                Err(cause) => {
                    match stalls[w] {
                        Some((_, c)) if c == cause => {}
                        _ => {
                            close_stall(&mut spans[w], &mut stalls[w], t);
                            stalls[w] = Some((t, cause));
                        }
                    }
                    continue;
                }
            };
            close_stall(&mut spans[w], &mut stalls[w], t);
            let detached = schedule.is_detached(&action);
            schedule.begin(w, action, t, detached);
            let latency = match action.kind {
                ActionKind::Setup => profile.setup_s,
                ActionKind::Load => profile.load_s,
                ActionKind::Compute => profile.compute_s * options.compute_scale,
                ActionKind::Store => profile.store_s,
                ActionKind::Finish => profile.finish_s,
            };
            if action.kind == ActionKind::Compute {
                active_computes += 1;
                compute_events += 1;
            }
            let span = |start: f64, end: f64| Span {
                kind: span_kind(action.kind),
                start,
                end,
                task: Some(action.task),
                iter: Some(action.iter),
                cause: None,
            };
            let done = if detached {
                let issue_end = t + profile.issue_s;
                if profile.issue_s > 0.0 {
                    issuing[w] = true;
                    spans[w].push(span(t, issue_end));
                    heap.push(Event {
                        time: issue_end,
                        seq,
                        kind: EventKind::IssueDone { w },
                    });
                    seq += 1;
                }
                async_ops.push(span(t, issue_end + latency));
                issue_end + latency
            } else {
                if latency > 0.0 {
                    spans[w].push(span(t, t + latency));
                }
                t + latency
            };
            heap.push(Event {
                time: done,
                seq,
                kind: EventKind::Complete { w, action, detached },
            });
            seq += 1;
        }

        let Some(event) = heap.pop() else {
            if schedule.is_done() {
                break;
            }
            return Err(LcsfError::Deadlock {
                blocked: schedule.blocked(),
            });
        };
        t = event.time;
        makespan = makespan.max(t);
        match event.kind {
            EventKind::IssueDone { w } => issuing[w] = false,
            EventKind::Complete { w, action, detached } => {
                if action.kind == ActionKind::Compute {
                    active_computes -= 1;
                }
                schedule.end(w, action, t, detached);
            }
        }
    }

    let workers: Vec<WorkerTimeline> = spans
        .into_iter()
        .enumerate()
        .map(|(w, spans)| WorkerTimeline {
            worker: schedule.worker_id(w),
            spans,
        })
        .collect();
    let worker_time = n as f64 * makespan;
    let mut busy = 0.0;
    let mut stall_fraction = BTreeMap::new();
    for s in workers.iter().flat_map(|w| &w.spans) {
        let d = s.end - s.start;
        match s.cause {
            Some(cause) => *stall_fraction.entry(cause).or_insert(0.0) += d,
            None => busy += d,
        }
    }
    let frac = |x: f64| if worker_time > 0.0 { x / worker_time } else { 0.0 };
    for v in stall_fraction.values_mut() {
        *v = frac(*v);
    }
    let throughput = if makespan > 0.0 { compute_events as f64 / makespan } else { 0.0 };
    Ok(Timeline {
        makespan,
        compute_events,
        throughput,
        work_throughput: throughput * profile.work_per_compute,
        issue_utilization: frac(busy),
        stall_fraction,
        workers,
        async_ops,
        trace: schedule.into_trace(),
    })
}

/// Simulates the first block of a kernel launch.
pub fn simulate_kernel_timed<K: KernelSpec>(
    kernel: &K,
    globals: &GlobalSet,
    config: &PipelineConfig,
    profile: &LatencyProfile,
    options: &SimOptions,
) -> Result<Timeline, LcsfError> {
    let grid = kernel.grid_blocks(globals)?;
    let workload = Workload::from_kernel(kernel, globals, 0, grid)?;
    simulate_timed(&workload, config, profile, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lcsf::validate_trace;

    fn unit() -> LatencyProfile {
        LatencyProfile::new(1.0, 1.0)
    }

    #[test]
    fn single_stage_serializes_load_and_compute() {
        let cfg = PipelineConfig::lcsf(1, 1, 1);
        let tl = simulate_timed(&Workload::single_task(10), &cfg, &unit(), &SimOptions::default()).unwrap();
        assert_eq!(tl.makespan, 20.0);
        assert!(validate_trace(&tl.trace).is_safe());
    }

    #[test]
    fn two_stages_overlap() {
        let cfg = PipelineConfig::lcsf(1, 1, 2);
        let tl = simulate_timed(&Workload::single_task(10), &cfg, &unit(), &SimOptions::default()).unwrap();
        assert_eq!(tl.makespan, 11.0);
        assert_eq!(tl.compute_events, 10);
        assert!((tl.throughput - 10.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn stalls_are_attributed() {
        let cfg = PipelineConfig::lcsf(1, 1, 1);
        let tl = simulate_timed(
            &Workload::single_task(4),
            &cfg,
            &LatencyProfile::new(3.0, 1.0),
            &SimOptions::default(),
        )
        .unwrap();
        assert_eq!(tl.makespan, 16.0);
        let consumer = &tl.workers[1];
        let waited: f64 = consumer
            .spans
            .iter()
            .filter(|s| s.cause == Some(StallCause::InputWait))
            .map(|s| s.end - s.start)
            .sum();
        assert_eq!(waited, 12.0);
        assert!(tl.stall_fraction[&StallCause::SlotFree] > 0.0);
    }

    #[test]
    fn compute_units_limit_concurrency() {
        let cfg = PipelineConfig::lcsf(4, 1, 4);
        let work = Workload::single_task(8);
        let free = simulate_timed(&work, &cfg, &LatencyProfile::new(0.1, 1.0), &SimOptions::default()).unwrap();
        let one = SimOptions {
            compute_units: Some(1),
            ..Default::default()
        };
        let limited = simulate_timed(&work, &cfg, &LatencyProfile::new(0.1, 1.0), &one).unwrap();
        assert!(limited.makespan >= 32.0);
        assert!(free.makespan < 9.0);
    }

    #[test]
    fn rejects_bad_profiles_and_footprints() {
        let cfg = PipelineConfig::lcsf(1, 1, 2);
        let w = Workload::single_task(2);
        assert!(simulate_timed(&w, &cfg, &LatencyProfile::new(0.0, 1.0), &SimOptions::default()).is_err());
        let big = w.with_block_bytes(200_000, 0);
        assert!(matches!(
            simulate_timed(&big, &cfg, &unit(), &SimOptions::default()),
            Err(LcsfError::SmemOverflow { .. })
        ));
    }
}
