//! The kernel-author side of the template: four stage functions plus setup.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tiles::{transfer, Coord4, Dest, GlobalTensor, SharedTile, Source, TileError};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error(transparent)]
    Tile(#[from] TileError),
    #[error("missing global tensor {0:?}")]
    MissingTensor(String),
    #[error("{0}")]
    Invalid(String),
}

/// Named global tensors visible to a kernel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GlobalSet {
    tensors: BTreeMap<String, GlobalTensor>,
}

impl GlobalSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: GlobalTensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn with(mut self, name: impl Into<String>, tensor: GlobalTensor) -> Self {
        self.insert(name, tensor);
        self
    }

    pub fn get(&self, name: &str) -> Result<&GlobalTensor, KernelError> {
        self.tensors.get(name).ok_or_else(|| KernelError::MissingTensor(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut GlobalTensor, KernelError> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| KernelError::MissingTensor(name.to_string()))
    }

    pub fn remove(&mut self, name: &str) -> Option<GlobalTensor> {
        self.tensors.remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub(crate) fn apply(&mut self, write: &GlobalWrite) -> Result<(), KernelError> {
        let dst = self.get_mut(&write.tensor)?;
        transfer(Source::Shared(&write.tile), Dest::Global(dst, write.coord))?;
        Ok(())
    }
}

/// A shared tile to be copied to a global tensor at tile coordinate `coord`.
#[derive(Debug, Clone)]
pub struct GlobalWrite {
    pub tensor: String,
    pub coord: Coord4,
    pub tile: SharedTile,
}

/// Per-task data computed once by `common_setup` and the task's iteration count.
#[derive(Debug, Clone)]
pub struct TaskPlan<C> {
    pub common: C,
    pub iters: usize,
}

/// The shape of one block's work, without any data: enough to drive the
/// schedule and the timing simulator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub task_iters: Vec<usize>,
    #[serde(default)]
    pub output_pipe: bool,
    /// Shared-memory bytes of one input slot, for the footprint check.
    #[serde(default)]
    pub input_block_bytes: usize,
    #[serde(default)]
    pub output_block_bytes: usize,
}

impl Workload {
    pub fn single_task(iters: usize) -> Self {
        Workload {
            task_iters: vec![iters],
            output_pipe: false,
            input_block_bytes: 0,
            output_block_bytes: 0,
        }
    }

    pub fn with_block_bytes(mut self, input: usize, output: usize) -> Self {
        self.input_block_bytes = input;
        self.output_block_bytes = output;
        self
    }

    pub fn with_output_pipe(mut self, on: bool) -> Self {
        self.output_pipe = on;
        self
    }

    pub fn total_iters(&self) -> usize {
        self.task_iters.iter().sum()
    }

    /// The tasks block `block` of `grid_blocks` would run: task ids
    /// `block, block + grid_blocks, ...` until `common_setup` declines.
    pub fn from_kernel<K: KernelSpec>(kernel: &K, globals: &GlobalSet, block: usize, grid_blocks: usize) -> Result<Self, KernelError> {
        let plans = task_plans(kernel, globals, block, grid_blocks)?;
        Ok(Workload {
            task_iters: plans.iter().map(|(_, p)| p.iters).collect(),
            output_pipe: kernel.uses_output_pipe(),
            input_block_bytes: kernel.input_block_bytes(),
            output_block_bytes: kernel.output_block_bytes(),
        })
    }
}

/// `(task, plan)` pairs of one block.
pub(crate) type TaskPlans<C> = Vec<(usize, TaskPlan<C>)>;

pub(crate) fn task_plans<K: KernelSpec>(
    kernel: &K,
    globals: &GlobalSet,
    block: usize,
    grid_blocks: usize,
) -> Result<TaskPlans<K::Common>, KernelError> {
    let mut plans = Vec::new();
    let mut task_iter = 0;
    loop {
        let task_id = task_iter * grid_blocks + block;
        match kernel.common_setup(task_id, globals)? {
            Some(plan) => plans.push((task_id, plan)),
            None => break,
        }
        task_iter += 1;
    }
    Ok(plans)
}

pub struct LoadCtx<'a, C> {
    pub common: &'a C,
    pub task_id: usize,
    pub iter: usize,
    pub globals: &'a GlobalSet,
}

pub struct SetupCtx<'a, C> {
    pub common: &'a C,
    pub task_id: usize,
    pub consumer: usize,
    pub num_consumers: usize,
    pub globals: &'a GlobalSet,
}

/// Passed to `compute`. The stage must call [`ComputeCtx::arrive`] exactly
/// once to release its input slot, and on output-pipelined kernels emit
/// exactly one output.
pub struct ComputeCtx<'a, C, O> {
    pub common: &'a C,
    pub task_id: usize,
    pub iter: usize,
    pub consumer: usize,
    pub num_consumers: usize,
    pub(crate) arrivals: u32,
    pub(crate) outputs: Vec<O>,
}

impl<C, O> ComputeCtx<'_, C, O> {
    pub fn arrive(&mut self) {
        self.arrivals += 1;
    }

    pub fn emit(&mut self, output: O) {
        self.outputs.push(output);
    }
}

/// Passed to `store`. Must call [`StoreCtx::arrive`] exactly once.
pub struct StoreCtx<'a, C> {
    pub common: &'a C,
    pub task_id: usize,
    pub iter: usize,
    pub(crate) arrivals: u32,
    pub(crate) writes: Vec<GlobalWrite>,
}

impl<C> StoreCtx<'_, C> {
    pub fn arrive(&mut self) {
        self.arrivals += 1;
    }

    pub fn write(&mut self, tensor: impl Into<String>, coord: Coord4, tile: SharedTile) {
        self.writes.push(GlobalWrite {
            tensor: tensor.into(),
            coord,
            tile,
        });
    }
}

pub struct FinishCtx<'a, C> {
    pub common: &'a C,
    pub task_id: usize,
    pub consumer: usize,
    pub num_consumers: usize,
    pub(crate) writes: Vec<GlobalWrite>,
}

impl<C> FinishCtx<'_, C> {
    pub fn write(&mut self, tensor: impl Into<String>, coord: Coord4, tile: SharedTile) {
        self.writes.push(GlobalWrite {
            tensor: tensor.into(),
            coord,
            tile,
        });
    }
}

/// A kernel expressed in the LCSF template.
pub trait KernelSpec: Sync {
    type Common: Send + Sync;
    type Input: Send + Sync;
    type Output: Send;
    type State: Send;

    fn name(&self) -> &str;

    /// Number of thread blocks to launch.
    fn grid_blocks(&self, globals: &GlobalSet) -> Result<usize, KernelError>;

    /// Returns `None` once `task_id` is past the end of the work.
    fn common_setup(&self, task_id: usize, globals: &GlobalSet) -> Result<Option<TaskPlan<Self::Common>>, KernelError>;

    /// Shared-memory bytes of one input slot.
    fn input_block_bytes(&self) -> usize;

    fn output_block_bytes(&self) -> usize {
        0
    }

    fn scratch_bytes(&self) -> usize {
        0
    }

    fn uses_output_pipe(&self) -> bool {
        false
    }

    /// True if `compute` for one iteration does not depend on state left by
    /// earlier iterations, so iterations may be split across consumers.
    fn iteration_independent(&self) -> bool {
        false
    }

    fn load(&self, ctx: &LoadCtx<'_, Self::Common>) -> Result<Self::Input, KernelError>;

    fn setup(&self, ctx: &SetupCtx<'_, Self::Common>) -> Result<Self::State, KernelError>;

    fn compute(
        &self,
        state: &mut Self::State,
        input: &Self::Input,
        ctx: &mut ComputeCtx<'_, Self::Common, Self::Output>,
    ) -> Result<(), KernelError>;

    /// `outputs` holds one entry per contributing consumer, in consumer order.
    fn store(&self, outputs: &[Self::Output], ctx: &mut StoreCtx<'_, Self::Common>) -> Result<(), KernelError> {
        let _ = outputs;
        ctx.arrive();
        Ok(())
    }

    fn finish(&self, state: Self::State, ctx: &mut FinishCtx<'_, Self::Common>) -> Result<(), KernelError>;
}
