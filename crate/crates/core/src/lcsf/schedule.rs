//! Control plane shared by every backend: worker programs, ring slots,
//! barrier state and the enabling rules for each action.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::barrier::Barrier;
use super::kernel::Workload;
use super::trace::{Trace, TraceEvent};
use super::{BlockedWorker, ConsumerMode, LcsfError, PipelineConfig, PipelineMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerRole {
    Producer,
    Consumer,
    /// A synchronous worker that loads and computes.
    Worker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WorkerId {
    pub role: WorkerRole,
    pub index: usize,
}

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let role = match self.role {
            WorkerRole::Producer => "producer",
            WorkerRole::Consumer => "consumer",
            WorkerRole::Worker => "worker",
        };
        write!(f, "{role}{}", self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Setup,
    Load,
    Compute,
    Store,
    Finish,
}

/// One unit of a worker's program. `task` indexes the block's task list,
/// `iter` is the iteration within the task and `global` the block-wide
/// iteration index that picks ring slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    pub task: usize,
    pub iter: usize,
    pub global: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub slot: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub out_slot: Option<usize>,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}(task {}, iter {})", self.kind, self.task, self.iter)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierKind {
    InputsArrived,
    InputsFinished,
    OutputsArrived,
    OutputsFinished,
}

/// Why an action cannot start yet: it needs `barrier[slot]` to pass `phase`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Wait {
    pub barrier: BarrierKind,
    pub slot: usize,
    pub phase: u64,
}

#[derive(Debug, Clone)]
struct WorkerState {
    id: WorkerId,
    /// Producers keep loads and stores in separate queues and take whichever
    /// head is ready first; everyone else runs a single program in order.
    queues: Vec<VecDeque<Action>>,
    busy: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct Schedule {
    mode: PipelineMode,
    n_in: usize,
    n_out: usize,
    inputs_arrived: Vec<Barrier>,
    inputs_finished: Vec<Barrier>,
    outputs_arrived: Vec<Barrier>,
    outputs_finished: Vec<Barrier>,
    workers: Vec<WorkerState>,
    outstanding: usize,
    seq: u64,
    trace: Trace,
}

impl Schedule {
    pub fn new(config: &PipelineConfig, workload: &Workload) -> Result<Self, LcsfError> {
        config.validate(0, 0, 0)?;
        let (n_in, n_out) = config.ring_depths();
        let consumers = config.num_consumer_workers;
        let cooperative = config.mode == PipelineMode::Lcsf && config.consumer_mode == ConsumerMode::Cooperative;
        let pipe_out = workload.output_pipe;

        let mut tasks = Vec::new();
        let mut g = 0;
        for (task, &iters) in workload.task_iters.iter().enumerate() {
            tasks.push((task, g..g + iters));
            g += iters;
        }
        let mut flat = Vec::with_capacity(g);
        for (task, range) in &tasks {
            for (iter, global) in range.clone().enumerate() {
                flat.push((*task, iter, global));
            }
        }
        let action = |kind, task, iter, global: usize| Action {
            kind,
            task,
            iter,
            global,
            slot: matches!(kind, ActionKind::Load | ActionKind::Compute).then_some(global % n_in),
            out_slot: (pipe_out && matches!(kind, ActionKind::Compute | ActionKind::Store)).then_some(global % n_out),
        };
        let marker = |kind, task: usize, range: &std::ops::Range<usize>| Action {
            kind,
            task,
            iter: 0,
            global: range.start,
            slot: None,
            out_slot: None,
        };

        let mut workers = Vec::new();
        match config.mode {
            PipelineMode::Lcsf => {
                let p_count = config.num_producer_workers;
                for p in 0..p_count {
                    let mine = flat.iter().filter(|(_, _, g)| g % p_count == p);
                    let loads = mine.clone().map(|&(t, i, g)| action(ActionKind::Load, t, i, g)).collect();
                    let stores = if pipe_out {
                        mine.map(|&(t, i, g)| action(ActionKind::Store, t, i, g)).collect()
                    } else {
                        VecDeque::new()
                    };
                    workers.push(WorkerState {
                        id: WorkerId {
                            role: WorkerRole::Producer,
                            index: p,
                        },
                        queues: vec![loads, stores],
                        busy: false,
                    });
                }
                for c in 0..consumers {
                    let mut prog = VecDeque::new();
                    for (task, range) in &tasks {
                        prog.push_back(marker(ActionKind::Setup, *task, range));
                        for (iter, g) in range.clone().enumerate() {
                            if cooperative || g % consumers == c {
                                prog.push_back(action(ActionKind::Compute, *task, iter, g));
                            }
                        }
                        prog.push_back(marker(ActionKind::Finish, *task, range));
                    }
                    workers.push(WorkerState {
                        id: WorkerId {
                            role: WorkerRole::Consumer,
                            index: c,
                        },
                        queues: vec![prog],
                        busy: false,
                    });
                }
            }
            PipelineMode::Synchronous => {
                for w in 0..consumers {
                    let mut prog = VecDeque::new();
                    for (task, range) in &tasks {
                        prog.push_back(marker(ActionKind::Setup, *task, range));
                        for (iter, g) in range.clone().enumerate() {
                            if g % consumers == w {
                                prog.push_back(action(ActionKind::Load, *task, iter, g));
                                prog.push_back(action(ActionKind::Compute, *task, iter, g));
                                if pipe_out {
                                    prog.push_back(action(ActionKind::Store, *task, iter, g));
                                }
                            }
                        }
                        prog.push_back(marker(ActionKind::Finish, *task, range));
                    }
                    workers.push(WorkerState {
                        id: WorkerId {
                            role: WorkerRole::Worker,
                            index: w,
                        },
                        queues: vec![prog],
                        busy: false,
                    });
                }
            }
        }
        let outstanding = workers.iter().flat_map(|w| &w.queues).map(VecDeque::len).sum();
        let releases = if cooperative { consumers as u32 } else { 1 };
        Ok(Schedule {
            mode: config.mode,
            n_in,
            n_out,
            inputs_arrived: vec![Barrier::new(1); n_in],
            inputs_finished: vec![Barrier::new(releases); n_in],
            outputs_arrived: vec![Barrier::new(releases); n_out],
            outputs_finished: vec![Barrier::new(1); n_out],
            workers,
            outstanding,
            seq: 0,
            trace: Trace {
                input_stages: n_in,
                output_stages: n_out,
                output_contributors: releases,
                events: Vec::new(),
            },
        })
    }

    /// Overrides the number of arrivals each input slot needs before reuse.
    /// Only useful for exercising deadlock detection.
    #[cfg(test)]
    pub(crate) fn with_input_releases(mut self, n: u32) -> Self {
        self.inputs_finished = vec![Barrier::new(n); self.n_in];
        self
    }

    pub fn num_workers(&self) -> usize {
        self.workers.len()
    }

    pub fn worker_id(&self, w: usize) -> WorkerId {
        self.workers[w].id
    }

    pub fn is_busy(&self, w: usize) -> bool {
        self.workers[w].busy
    }

    /// True once every action has ended.
    pub fn is_done(&self) -> bool {
        self.outstanding == 0
    }

    /// Work remains but nothing is running and nothing can start.
    pub fn is_stuck(&self) -> bool {
        !self.is_done() && (0..self.workers.len()).all(|w| !self.workers[w].busy && !matches!(self.pick(w), Ok(Some(_))))
    }

    /// Loads and stores are asynchronous in the LCSF template: the issuing
    /// producer is free while the copy is in flight.
    pub fn is_detached(&self, action: &Action) -> bool {
        self.mode == PipelineMode::Lcsf && matches!(action.kind, ActionKind::Load | ActionKind::Store)
    }

    pub fn check(&self, action: &Action) -> Result<(), Wait> {
        let need = |barriers: &[Barrier], kind, slot: usize, phase: u64| {
            if barriers[slot].generation >= phase {
                Ok(())
            } else {
                Err(Wait {
                    barrier: kind,
                    slot,
                    phase,
                })
            }
        };
        let g = action.global as u64;
        match action.kind {
            ActionKind::Setup | ActionKind::Finish => Ok(()),
            ActionKind::Load => {
                let s = action.global % self.n_in;
                need(&self.inputs_finished, BarrierKind::InputsFinished, s, g / self.n_in as u64)
            }
            ActionKind::Compute => {
                let s = action.global % self.n_in;
                need(&self.inputs_arrived, BarrierKind::InputsArrived, s, g / self.n_in as u64 + 1)?;
                if let Some(os) = action.out_slot {
                    need(&self.outputs_finished, BarrierKind::OutputsFinished, os, g / self.n_out as u64)?;
                }
                Ok(())
            }
            ActionKind::Store => {
                let os = action.global % self.n_out;
                need(&self.outputs_arrived, BarrierKind::OutputsArrived, os, g / self.n_out as u64 + 1)
            }
        }
    }

    /// The first ready action at the head of one of the worker's queues.
    /// `Ok(None)` means the worker has no work left; `Err` carries the wait of
    /// the first blocked head.
    pub fn pick(&self, w: usize) -> Result<Option<Action>, Wait> {
        let mut first_wait = None;
        for q in &self.workers[w].queues {
            if let Some(a) = q.front() {
                match self.check(a) {
                    Ok(()) => return Ok(Some(*a)),
                    Err(wait) => {
                        first_wait.get_or_insert(wait);
                    }
                }
            }
        }
        match first_wait {
            Some(wait) => Err(wait),
            None => Ok(None),
        }
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq - 1
    }

    pub fn begin(&mut self, w: usize, action: Action, time: f64, detached: bool) {
        debug_assert!(self.check(&action).is_ok(), "action started before it was enabled");
        let worker = &mut self.workers[w];
        let q = worker
            .queues
            .iter_mut()
            .find(|q| q.front() == Some(&action))
            .expect("begin called with an action not at a queue head");
        q.pop_front();
        if !detached {
            worker.busy = true;
        }
        let (id, seq) = (worker.id, self.next_seq());
        self.trace.events.push(TraceEvent::Begin {
            seq,
            time,
            worker: id,
            action,
            detached,
        });
    }

    /// Ends an action and performs the arrivals it implies.
    pub fn end(&mut self, w: usize, action: Action, time: f64, detached: bool) {
        if !detached {
            self.workers[w].busy = false;
        }
        self.outstanding -= 1;
        let (id, seq) = (self.workers[w].id, self.next_seq());
        self.trace.events.push(TraceEvent::End {
            seq,
            time,
            worker: id,
            action,
            detached,
        });
        match action.kind {
            ActionKind::Load => self.arrive(BarrierKind::InputsArrived, action.global % self.n_in, time),
            ActionKind::Compute => {
                self.arrive(BarrierKind::InputsFinished, action.global % self.n_in, time);
                if let Some(os) = action.out_slot {
                    self.arrive(BarrierKind::OutputsArrived, os, time);
                }
            }
            ActionKind::Store => self.arrive(BarrierKind::OutputsFinished, action.global % self.n_out, time),
            ActionKind::Setup | ActionKind::Finish => {}
        }
    }

    fn arrive(&mut self, kind: BarrierKind, slot: usize, time: f64) {
        let barrier = match kind {
            BarrierKind::InputsArrived => &mut self.inputs_arrived[slot],
            BarrierKind::InputsFinished => &mut self.inputs_finished[slot],
            BarrierKind::OutputsArrived => &mut self.outputs_arrived[slot],
            BarrierKind::OutputsFinished => &mut self.outputs_finished[slot],
        };
        if barrier.arrive() {
            let generation = barrier.generation;
            let seq = self.next_seq();
            self.trace.events.push(TraceEvent::Pass {
                seq,
                time,
                barrier: kind,
                slot,
                generation,
            });
        }
    }

    fn barrier(&self, kind: BarrierKind, slot: usize) -> &Barrier {
        match kind {
            BarrierKind::InputsArrived => &self.inputs_arrived[slot],
            BarrierKind::InputsFinished => &self.inputs_finished[slot],
            BarrierKind::OutputsArrived => &self.outputs_arrived[slot],
            BarrierKind::OutputsFinished => &self.outputs_finished[slot],
        }
    }

    /// Every idle worker with work left, and the barrier its next action needs.
    pub fn blocked(&self) -> Vec<BlockedWorker> {
        (0..self.workers.len())
            .filter(|&w| !self.workers[w].busy)
            .filter_map(|w| {
                let wait = self.pick(w).err()?;
                let action = *self.workers[w].queues.iter().find_map(|q| q.front())?;
                Some(BlockedWorker {
                    worker: self.workers[w].id,
                    action,
                    barrier: wait.barrier,
                    slot: wait.slot,
                    needed_generation: wait.phase,
                    generation: self.barrier(wait.barrier, wait.slot).generation,
                })
            })
            .collect()
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_round_robin(s: &mut Schedule) -> Result<(), Vec<BlockedWorker>> {
        let mut in_flight: VecDeque<(usize, Action)> = VecDeque::new();
        let mut t = 0.0;
        loop {
            let mut progressed = false;
            for w in 0..s.num_workers() {
                if !s.is_busy(w) {
                    if let Ok(Some(a)) = s.pick(w) {
                        let det = s.is_detached(&a);
                        s.begin(w, a, t, det);
                        in_flight.push_back((w, a));
                        progressed = true;
                    }
                }
            }
            if let Some((w, a)) = in_flight.pop_front() {
                let det = s.is_detached(&a);
                s.end(w, a, t, det);
                progressed = true;
            }
            t += 1.0;
            if s.is_done() {
                return Ok(());
            }
            if !progressed {
                return Err(s.blocked());
            }
        }
    }

    #[test]
    fn programs_cover_every_iteration() {
        let cfg = PipelineConfig::lcsf(2, 2, 3);
        let s = Schedule::new(&cfg, &Workload::single_task(7).with_output_pipe(true)).unwrap();
        // 7 loads + 7 stores over two producers, 2 x (setup + 7 computes + finish).
        assert_eq!(s.outstanding, 14 + 2 * 9);
        let producer0: Vec<_> = s.workers[0].queues[0].iter().map(|a| a.global).collect();
        assert_eq!(producer0, vec![0, 2, 4, 6]);
    }

    #[test]
    fn slot_reuse_waits_for_release() {
        let cfg = PipelineConfig::lcsf(1, 1, 2);
        let mut s = Schedule::new(&cfg, &Workload::single_task(4)).unwrap();
        let load = |g| Action {
            kind: ActionKind::Load,
            task: 0,
            iter: g,
            global: g,
            slot: Some(g % 2),
            out_slot: None,
        };
        assert_eq!(s.pick(0), Ok(Some(load(0))));
        s.begin(0, load(0), 0.0, true);
        s.end(0, load(0), 1.0, true);
        s.begin(0, load(1), 1.0, true);
        s.end(0, load(1), 2.0, true);
        // Slot 0 still holds iteration 0, which no consumer has released.
        let wait = s.pick(0).unwrap_err();
        assert_eq!(wait.barrier, BarrierKind::InputsFinished);
        assert_eq!((wait.slot, wait.phase), (0, 1));
    }

    #[test]
    fn completes_and_reports_deadlock() {
        for stages in 1..4 {
            let cfg = PipelineConfig::lcsf(2, 1, stages);
            let mut s = Schedule::new(&cfg, &Workload::single_task(6).with_output_pipe(true)).unwrap();
            run_round_robin(&mut s).unwrap();
        }
        let cfg = PipelineConfig::lcsf(2, 1, 2);
        let mut s = Schedule::new(&cfg, &Workload::single_task(6)).unwrap().with_input_releases(3);
        let blocked = run_round_robin(&mut s).unwrap_err();
        assert!(!blocked.is_empty());
        assert!(blocked.iter().any(|b| b.barrier == BarrierKind::InputsFinished));
    }
}
