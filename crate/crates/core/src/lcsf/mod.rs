//! The load-compute-store-finish (LCSF) kernel template.
//!
//! A thread block runs producer workers that move tiles between global and
//! shared memory and consumer workers that compute on them. Inputs flow through
//! an N-slot ring of shared-memory buffers guarded by two barriers per slot:
//!
//! * `inputs_arrived[s]` passes when the load for slot `s` lands;
//! * `inputs_finished[s]` passes when every consumer has released slot `s`.
//!
//! A consumer may read slot `s` for iteration `i` only after the load barrier
//! for `(s, i)` has passed; a producer may refill slot `s` with iteration
//! `i + N` only after all consumers arrived on `(s, i)`. The optional output
//! ring mirrors this with roles reversed.
//!
//! The same control plane ([`schedule`]) drives three backends: a seeded
//! single-threaded interleaver and an OS-thread executor (both functional,
//! in [`functional`]) and a discrete-event timing simulator ([`timed`]).

pub mod barrier;
pub mod chrome;
pub mod functional;
pub mod kernel;
pub mod occupancy;
pub mod schedule;
pub mod timed;
pub mod trace;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tiles::TileError;

pub use barrier::Barrier;
pub use functional::{execute_functional, Backend, FunctionalRun, Scheduler};
pub use kernel::{ComputeCtx, FinishCtx, GlobalSet, GlobalWrite, KernelError, KernelSpec, LoadCtx, SetupCtx, StoreCtx, TaskPlan, Workload};
pub use occupancy::{occupancy_sweep, OccupancyCurve, OccupancyPoint, OccupancyScenario, ResourceModel};
pub use schedule::{Action, ActionKind, BarrierKind, WorkerId, WorkerRole};
pub use timed::{simulate_kernel_timed, simulate_timed, LatencyProfile, SimOptions, Span, SpanKind, StallCause, Timeline};
pub use trace::{validate_trace, Trace, TraceEvent, TraceReport, Violation};

/// How producers and consumers are arranged in a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    /// Dedicated producer workers issue asynchronous loads and stores.
    Lcsf,
    /// Every worker loads its own input synchronously and then computes on it.
    Synchronous,
}

/// How consumers divide iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsumerMode {
    /// Every consumer computes on every iteration's input (each on its own share).
    Cooperative,
    /// Iteration `g` goes to consumer `g % consumers`; requires an
    /// iteration-independent compute stage. Lets consumers run different
    /// iterations concurrently.
    Distributed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub num_consumer_workers: usize,
    pub num_producer_workers: usize,
    pub input_pipe_stages: usize,
    pub output_pipe_stages: usize,
    pub mode: PipelineMode,
    pub consumer_mode: ConsumerMode,
    /// Shared memory available to one block.
    pub smem_limit_bytes: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            num_consumer_workers: 1,
            num_producer_workers: 1,
            input_pipe_stages: 4,
            output_pipe_stages: 1,
            mode: PipelineMode::Lcsf,
            consumer_mode: ConsumerMode::Cooperative,
            smem_limit_bytes: 227 * 1024,
        }
    }
}

impl PipelineConfig {
    pub fn lcsf(consumers: usize, producers: usize, stages: usize) -> Self {
        PipelineConfig {
            num_consumer_workers: consumers,
            num_producer_workers: producers,
            input_pipe_stages: stages,
            ..Default::default()
        }
    }

    /// `workers` fused load-then-compute workers, each with a private buffer.
    pub fn synchronous(workers: usize) -> Self {
        PipelineConfig {
            num_consumer_workers: workers,
            num_producer_workers: 0,
            input_pipe_stages: workers,
            output_pipe_stages: workers,
            mode: PipelineMode::Synchronous,
            consumer_mode: ConsumerMode::Distributed,
            ..Default::default()
        }
    }

    pub fn with_output_stages(mut self, stages: usize) -> Self {
        self.output_pipe_stages = stages;
        self
    }

    pub fn with_consumer_mode(mut self, mode: ConsumerMode) -> Self {
        self.consumer_mode = mode;
        self
    }

    pub fn with_smem_limit(mut self, bytes: usize) -> Self {
        self.smem_limit_bytes = bytes;
        self
    }

    /// Input and output ring depths as actually used by the schedule.
    pub(crate) fn ring_depths(&self) -> (usize, usize) {
        match self.mode {
            PipelineMode::Lcsf => (self.input_pipe_stages, self.output_pipe_stages),
            PipelineMode::Synchronous => (self.num_consumer_workers, self.num_consumer_workers),
        }
    }

    /// Checks counts and the shared-memory budget for the given block sizes.
    pub fn validate(&self, input_block_bytes: usize, output_block_bytes: usize, scratch_bytes: usize) -> Result<(), LcsfError> {
        if self.num_consumer_workers == 0 {
            return Err(LcsfError::Config("at least one consumer worker is required".into()));
        }
        match self.mode {
            PipelineMode::Lcsf => {
                if self.num_producer_workers == 0 {
                    return Err(LcsfError::Config("at least one producer worker is required".into()));
                }
                if self.input_pipe_stages == 0 || self.output_pipe_stages == 0 {
                    return Err(LcsfError::Config("pipeline stages must be at least 1".into()));
                }
            }
            PipelineMode::Synchronous => {
                if self.consumer_mode != ConsumerMode::Distributed {
                    return Err(LcsfError::Config(
                        "synchronous workers each take their own iterations (distributed consumer mode)".into(),
                    ));
                }
            }
        }
        let (n_in, n_out) = self.ring_depths();
        let needed = n_in * input_block_bytes + n_out * output_block_bytes + scratch_bytes;
        if needed > self.smem_limit_bytes {
            return Err(LcsfError::SmemOverflow {
                needed,
                available: self.smem_limit_bytes,
            });
        }
        Ok(())
    }
}

/// A worker that could not make progress, and what it was waiting on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockedWorker {
    pub worker: WorkerId,
    pub action: Action,
    pub barrier: BarrierKind,
    pub slot: usize,
    pub needed_generation: u64,
    pub generation: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContractViolation {
    /// A stage signalled its release barrier more than once.
    DoubleArrive { arrivals: u32 },
    /// A stage returned without signalling its release barrier.
    MissingArrive,
    /// A compute stage on an output-pipelined kernel produced no output, or
    /// produced more than one.
    OutputCount { emitted: u32 },
    /// A kernel without an output pipe emitted an output.
    UnexpectedOutput,
}

#[derive(Debug, Error)]
pub enum LcsfError {
    #[error("pipeline configuration: {0}")]
    Config(String),
    #[error("shared memory overflow: {needed} bytes needed, {available} available")]
    SmemOverflow { needed: usize, available: usize },
    #[error("deadlock: no runnable worker with work remaining; blocked on {}", describe_blocked(.blocked))]
    Deadlock { blocked: Vec<BlockedWorker> },
    #[error("contract violation by {worker} in {action}: {violation:?}")]
    Contract {
        worker: WorkerId,
        action: Action,
        violation: ContractViolation,
    },
    #[error("kernel error: {0}")]
    Kernel(#[from] KernelError),
    #[error("invalid latency profile: {0}")]
    Profile(String),
}

impl From<TileError> for LcsfError {
    fn from(e: TileError) -> Self {
        LcsfError::Kernel(KernelError::Tile(e))
    }
}

fn describe_blocked(blocked: &[BlockedWorker]) -> String {
    blocked
        .iter()
        .map(|b| {
            format!(
                "{} waits {:?}[{}] gen {} (at {})",
                b.worker, b.barrier, b.slot, b.needed_generation, b.generation
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}
