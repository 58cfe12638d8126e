//! Functional execution: runs the kernel's stage functions on real tiles,
//! either interleaved step by step on one thread or on one OS thread per
//! worker.

use std::sync::{Arc, Condvar, Mutex, RwLock};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kernel::{
    task_plans, ComputeCtx, FinishCtx, GlobalSet, GlobalWrite, KernelSpec, LoadCtx, SetupCtx, StoreCtx, TaskPlan, Workload,
};
use super::schedule::{Action, ActionKind, Schedule, WorkerId};
use super::trace::Trace;
use super::{ConsumerMode, ContractViolation, LcsfError, PipelineConfig, PipelineMode};

/// Picks the next step of the interleaver among all enabled ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Scheduler {
    /// Always the first enabled step.
    InOrder,
    /// Uniformly random among enabled steps.
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Interleaved(Scheduler),
    Threads,
}

#[derive(Debug, Clone)]
pub struct FunctionalRun {
    pub globals: GlobalSet,
    /// One trace per block that had work.
    pub traces: Vec<Trace>,
}

/// Runs every block of `kernel` over `globals` and returns the updated tensors.
pub fn execute_functional<K: KernelSpec>(
    kernel: &K,
    globals: GlobalSet,
    config: &PipelineConfig,
    backend: Backend,
) -> Result<FunctionalRun, LcsfError> {
    let out_bytes = if kernel.uses_output_pipe() {
        kernel.output_block_bytes()
    } else {
        0
    };
    config.validate(kernel.input_block_bytes(), out_bytes, kernel.scratch_bytes())?;
    let splits = config.mode == PipelineMode::Synchronous || config.consumer_mode == ConsumerMode::Distributed;
    if splits && !kernel.iteration_independent() {
        return Err(LcsfError::Config(format!(
            "kernel {} carries state across iterations and cannot split them across workers",
            kernel.name()
        )));
    }
    let grid = kernel.grid_blocks(&globals)?;
    let globals = RwLock::new(globals);
    let mut traces = Vec::new();
    for block in 0..grid {
        let plans = task_plans(kernel, &globals.read().expect("globals lock"), block, grid)?;
        if plans.is_empty() {
            continue;
        }
        let workload = Workload {
            task_iters: plans.iter().map(|(_, p)| p.iters).collect(),
            output_pipe: kernel.uses_output_pipe(),
            input_block_bytes: kernel.input_block_bytes(),
            output_block_bytes: kernel.output_block_bytes(),
        };
        let runner = Runner {
            kernel,
            plans: &plans,
            config,
            globals: &globals,
        };
        let schedule = Schedule::new(config, &workload)?;
        let trace = match backend {
            Backend::Interleaved(scheduler) => runner.interleave(schedule, scheduler)?,
            Backend::Threads => runner.threaded(schedule)?,
        };
        traces.push(trace);
    }
    Ok(FunctionalRun {
        globals: globals.into_inner().expect("globals lock"),
        traces,
    })
}

/// Result of running a stage function, applied when the action ends.
enum Effect<K: KernelSpec> {
    State(usize, K::State),
    Loaded(usize, K::Input),
    Emitted(Option<(usize, usize, K::Output)>),
    Writes(Vec<GlobalWrite>),
}

struct Runner<'a, K: KernelSpec> {
    kernel: &'a K,
    plans: &'a [(usize, TaskPlan<K::Common>)],
    config: &'a PipelineConfig,
    globals: &'a RwLock<GlobalSet>,
}

struct Slots<K: KernelSpec> {
    inputs: Vec<Option<Arc<K::Input>>>,
    outputs: Vec<Vec<Option<K::Output>>>,
}

impl<K: KernelSpec> Slots<K> {
    fn new(schedule_cfg: &PipelineConfig, contributors: usize) -> Self {
        let (n_in, n_out) = schedule_cfg.ring_depths();
        Slots {
            inputs: (0..n_in).map(|_| None).collect(),
            outputs: (0..n_out).map(|_| (0..contributors).map(|_| None).collect()).collect(),
        }
    }
}

impl<K: KernelSpec> Runner<'_, K> {
    fn contributors(&self) -> usize {
        if self.config.mode == PipelineMode::Lcsf && self.config.consumer_mode == ConsumerMode::Cooperative {
            self.config.num_consumer_workers
        } else {
            1
        }
    }

    fn part(&self, consumer: usize) -> usize {
        if self.contributors() == 1 {
            0
        } else {
            consumer
        }
    }

    fn load(&self, action: &Action) -> Result<K::Input, LcsfError> {
        let (task_id, plan) = &self.plans[action.task];
        let globals = self.globals.read().expect("globals lock");
        Ok(self.kernel.load(&LoadCtx {
            common: &plan.common,
            task_id: *task_id,
            iter: action.iter,
            globals: &globals,
        })?)
    }

    fn setup(&self, consumer: usize, action: &Action) -> Result<K::State, LcsfError> {
        let (task_id, plan) = &self.plans[action.task];
        let globals = self.globals.read().expect("globals lock");
        Ok(self.kernel.setup(&SetupCtx {
            common: &plan.common,
            task_id: *task_id,
            consumer,
            num_consumers: self.config.num_consumer_workers,
            globals: &globals,
        })?)
    }

    fn compute(
        &self,
        w: WorkerId,
        consumer: usize,
        state: &mut K::State,
        input: &K::Input,
        action: &Action,
    ) -> Result<Option<K::Output>, LcsfError> {
        let (task_id, plan) = &self.plans[action.task];
        let mut ctx = ComputeCtx {
            common: &plan.common,
            task_id: *task_id,
            iter: action.iter,
            consumer,
            num_consumers: self.config.num_consumer_workers,
            arrivals: 0,
            outputs: Vec::new(),
        };
        self.kernel.compute(state, input, &mut ctx)?;
        let violation = |violation| LcsfError::Contract {
            worker: w,
            action: *action,
            violation,
        };
        match ctx.arrivals {
            1 => {}
            0 => return Err(violation(ContractViolation::MissingArrive)),
            n => return Err(violation(ContractViolation::DoubleArrive { arrivals: n })),
        }
        let emitted = ctx.outputs.len() as u32;
        match (action.out_slot.is_some(), emitted) {
            (true, 1) => Ok(ctx.outputs.pop()),
            (false, 0) => Ok(None),
            (false, _) => Err(violation(ContractViolation::UnexpectedOutput)),
            (true, n) => Err(violation(ContractViolation::OutputCount { emitted: n })),
        }
    }

    fn store(&self, w: WorkerId, outputs: &[K::Output], action: &Action) -> Result<Vec<GlobalWrite>, LcsfError> {
        let (task_id, plan) = &self.plans[action.task];
        let mut ctx = StoreCtx {
            common: &plan.common,
            task_id: *task_id,
            iter: action.iter,
            arrivals: 0,
            writes: Vec::new(),
        };
        self.kernel.store(outputs, &mut ctx)?;
        match ctx.arrivals {
            1 => Ok(ctx.writes),
            n => Err(LcsfError::Contract {
                worker: w,
                action: *action,
                violation: if n == 0 {
                    ContractViolation::MissingArrive
                } else {
                    ContractViolation::DoubleArrive { arrivals: n }
                },
            }),
        }
    }

    fn finish(&self, consumer: usize, state: K::State, action: &Action) -> Result<Vec<GlobalWrite>, LcsfError> {
        let (task_id, plan) = &self.plans[action.task];
        let mut ctx = FinishCtx {
            common: &plan.common,
            task_id: *task_id,
            consumer,
            num_consumers: self.config.num_consumer_workers,
            writes: Vec::new(),
        };
        self.kernel.finish(state, &mut ctx)?;
        Ok(ctx.writes)
    }

    fn apply(&self, writes: &[GlobalWrite]) -> Result<(), LcsfError> {
        let mut globals = self.globals.write().expect("globals lock");
        for w in writes {
            globals.apply(w)?;
        }
        Ok(())
    }

    /// Runs the stage function for `action` against the current slot contents.
    fn perform(
        &self,
        schedule: &Schedule,
        w: usize,
        action: &Action,
        slots: &mut Slots<K>,
        states: &mut [Option<K::State>],
    ) -> Result<Effect<K>, LcsfError> {
        let id = schedule.worker_id(w);
        let consumer = id.index;
        Ok(match action.kind {
            ActionKind::Setup => Effect::State(consumer, self.setup(consumer, action)?),
            ActionKind::Load => Effect::Loaded(action.slot.unwrap_or(0), self.load(action)?),
            ActionKind::Compute => {
                let input = slots.inputs[action.slot.unwrap_or(0)]
                    .clone()
                    .expect("compute enabled on an empty slot");
                let state = states[consumer].as_mut().expect("compute before setup");
                let out = self.compute(id, consumer, state, &input, action)?;
                Effect::Emitted(out.map(|o| (action.out_slot.unwrap_or(0), self.part(consumer), o)))
            }
            ActionKind::Store => {
                let os = action.out_slot.unwrap_or(0);
                let outputs: Vec<K::Output> = slots.outputs[os]
                    .iter_mut()
                    .map(|p| p.take().expect("store enabled on an incomplete output slot"))
                    .collect();
                Effect::Writes(self.store(id, &outputs, action)?)
            }
            ActionKind::Finish => {
                let state = states[consumer].take().expect("finish before setup");
                Effect::Writes(self.finish(consumer, state, action)?)
            }
        })
    }

    fn commit(&self, effect: Effect<K>, slots: &mut Slots<K>, states: &mut [Option<K::State>]) -> Result<(), LcsfError> {
        match effect {
            Effect::State(c, s) => states[c] = Some(s),
            Effect::Loaded(slot, input) => slots.inputs[slot] = Some(Arc::new(input)),
            Effect::Emitted(Some((os, part, o))) => slots.outputs[os][part] = Some(o),
            Effect::Emitted(None) => {}
            Effect::Writes(writes) => self.apply(&writes)?,
        }
        Ok(())
    }

    fn interleave(&self, mut schedule: Schedule, scheduler: Scheduler) -> Result<Trace, LcsfError> {
        enum Step {
            Begin(usize, Action),
            End(usize),
        }
        let mut rng = match scheduler {
            Scheduler::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Scheduler::InOrder => None,
        };
        let mut slots = Slots::<K>::new(self.config, self.contributors());
        let mut states: Vec<Option<K::State>> = (0..self.config.num_consumer_workers).map(|_| None).collect();
        let mut pending: Vec<(usize, Action, Effect<K>)> = Vec::new();
        let mut clock = 0.0;
        loop {
            let mut steps: Vec<Step> = (0..schedule.num_workers())
                .filter(|&w| !schedule.is_busy(w))
                .filter_map(|w| schedule.pick(w).ok().flatten().map(|a| Step::Begin(w, a)))
                .collect();
            steps.extend((0..pending.len()).map(Step::End));
            if steps.is_empty() {
                if schedule.is_done() {
                    return Ok(schedule.into_trace());
                }
                return Err(LcsfError::Deadlock {
                    blocked: schedule.blocked(),
                });
            }
            let pick = match rng.as_mut() {
                Some(rng) => rng.random_range(0..steps.len()),
                None => 0,
            };
            match steps.swap_remove(pick) {
                Step::Begin(w, action) => {
                    let effect = self.perform(&schedule, w, &action, &mut slots, &mut states)?;
                    let detached = schedule.is_detached(&action);
                    schedule.begin(w, action, clock, detached);
                    pending.push((w, action, effect));
                }
                Step::End(i) => {
                    let (w, action, effect) = pending.remove(i);
                    self.commit(effect, &mut slots, &mut states)?;
                    let detached = schedule.is_detached(&action);
                    schedule.end(w, action, clock, detached);
                }
            }
            clock += 1.0;
        }
    }

    fn threaded(&self, schedule: Schedule) -> Result<Trace, LcsfError> {
        struct Shared<K: KernelSpec> {
            schedule: Schedule,
            slots: Slots<K>,
            clock: f64,
            failed: Option<LcsfError>,
        }
        let workers = schedule.num_workers();
        let shared = Mutex::new(Shared::<K> {
            schedule,
            slots: Slots::new(self.config, self.contributors()),
            clock: 0.0,
            failed: None,
        });
        let cv = Condvar::new();

        let worker_loop = |w: usize| {
            let mut state: Option<K::State> = None;
            let mut guard = shared.lock().expect("schedule lock");
            loop {
                let action = loop {
                    if guard.failed.is_some() {
                        return;
                    }
                    match guard.schedule.pick(w) {
                        Ok(Some(a)) => break Some(a),
                        Ok(None) => break None,
                        Err(_) => {
                            if guard.schedule.is_stuck() {
                                let blocked = guard.schedule.blocked();
                                guard.failed = Some(LcsfError::Deadlock { blocked });
                                cv.notify_all();
                                return;
                            }
                            guard = cv.wait(guard).expect("schedule lock");
                        }
                    }
                };
                let Some(action) = action else {
                    if guard.schedule.is_stuck() {
                        let blocked = guard.schedule.blocked();
                        guard.failed = Some(LcsfError::Deadlock { blocked });
                    }
                    cv.notify_all();
                    return;
                };
                let id = guard.schedule.worker_id(w);
                let t = guard.clock;
                guard.clock += 1.0;
                guard.schedule.begin(w, action, t, false);
                // Take what the stage needs while holding the lock.
                let input = match action.kind {
                    ActionKind::Compute => guard.slots.inputs[action.slot.unwrap_or(0)].clone(),
                    _ => None,
                };
                let outputs: Vec<K::Output> = match action.kind {
                    ActionKind::Store => guard.slots.outputs[action.out_slot.unwrap_or(0)]
                        .iter_mut()
                        .map(|p| p.take().expect("store enabled on an incomplete output slot"))
                        .collect(),
                    _ => Vec::new(),
                };
                drop(guard);

                let consumer = id.index;
                let result: Result<Effect<K>, LcsfError> = (|| {
                    Ok(match action.kind {
                        ActionKind::Setup => {
                            state = Some(self.setup(consumer, &action)?);
                            Effect::Emitted(None)
                        }
                        ActionKind::Load => Effect::Loaded(action.slot.unwrap_or(0), self.load(&action)?),
                        ActionKind::Compute => {
                            let input = input.expect("compute enabled on an empty slot");
                            let st = state.as_mut().expect("compute before setup");
                            let out = self.compute(id, consumer, st, &input, &action)?;
                            Effect::Emitted(out.map(|o| (action.out_slot.unwrap_or(0), self.part(consumer), o)))
                        }
                        ActionKind::Store => {
                            let writes = self.store(id, &outputs, &action)?;
                            self.apply(&writes)?;
                            Effect::Emitted(None)
                        }
                        ActionKind::Finish => {
                            let st = state.take().expect("finish before setup");
                            let writes = self.finish(consumer, st, &action)?;
                            self.apply(&writes)?;
                            Effect::Emitted(None)
                        }
                    })
                })();

                guard = shared.lock().expect("schedule lock");
                match result {
                    Ok(effect) => {
                        match effect {
                            Effect::Loaded(slot, input) => guard.slots.inputs[slot] = Some(Arc::new(input)),
                            Effect::Emitted(Some((os, part, o))) => guard.slots.outputs[os][part] = Some(o),
                            _ => {}
                        }
                        let t = guard.clock;
                        guard.clock += 1.0;
                        guard.schedule.end(w, action, t, false);
                    }
                    Err(e) => {
                        guard.failed.get_or_insert(e);
                    }
                }
                cv.notify_all();
            }
        };

        std::thread::scope(|s| {
            for w in 0..workers {
                let worker_loop = &worker_loop;
                s.spawn(move || worker_loop(w));
            }
        });
        let shared = shared.into_inner().expect("schedule lock");
        if let Some(e) = shared.failed {
            return Err(e);
        }
        debug_assert!(shared.schedule.is_done());
        Ok(shared.schedule.into_trace())
    }
}
