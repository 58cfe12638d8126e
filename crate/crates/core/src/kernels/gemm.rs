use serde::{Deserialize, Serialize};

use crate::grid::supergroup_coord;
use crate::lcsf::{ComputeCtx, FinishCtx, GlobalSet, KernelError, KernelSpec, LoadCtx, PipelineConfig, SetupCtx, TaskPlan};
use crate::tiles::{copy_cast, mma_ab, swap_layout, transfer, Coord4, Dest, Dtype, GlobalTensor, Major, SharedTile, Source, Tile};

/// Side of the square base tile the main loop moves.
pub const GEMM_TILE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmConfig {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    /// 64-row output tiles per block, one consumer each.
    pub m_block: usize,
    /// 64-column output tiles per block.
    pub n_block: usize,
    pub super_m: usize,
    pub dtype: Dtype,
    /// Persistent blocks launched (one per SM).
    pub grid_blocks: usize,
}

impl GemmConfig {
    pub fn new(m: usize, n: usize, k: usize) -> Self {
        GemmConfig {
            m,
            n,
            k,
            m_block: 2,
            n_block: 4,
            super_m: 12,
            dtype: Dtype::Bf16,
            grid_blocks: 132,
        }
    }

    /// The default block shape, shrunk where the matrix is too small to hold it.
    pub fn fitted(m: usize, n: usize, k: usize) -> Self {
        let mut cfg = Self::new(m, n, k);
        let fit = |extent: usize, want: usize| (1..=want).rev().find(|b| extent.is_multiple_of(GEMM_TILE * b)).unwrap_or(1);
        cfg.m_block = fit(m, cfg.m_block);
        cfg.n_block = fit(n, cfg.n_block);
        cfg
    }

    pub fn with_dtype(mut self, dtype: Dtype) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if self.m_block == 0 || self.n_block == 0 || self.super_m == 0 || self.grid_blocks == 0 {
            return Err(KernelError::Invalid(
                "block multipliers, SUPER_M and grid size must be positive".into(),
            ));
        }
        let (bm, bn) = (GEMM_TILE * self.m_block, GEMM_TILE * self.n_block);
        if self.m == 0
            || self.n == 0
            || self.k == 0
            || !self.m.is_multiple_of(bm)
            || !self.n.is_multiple_of(bn)
            || !self.k.is_multiple_of(GEMM_TILE)
        {
            return Err(KernelError::Invalid(format!(
                "GEMM {}x{}x{} does not tile into {bm}x{bn} blocks with K a multiple of {GEMM_TILE}",
                self.m, self.n, self.k
            )));
        }
        Ok(())
    }

    pub fn row_blocks(&self) -> usize {
        self.m / (GEMM_TILE * self.m_block)
    }

    pub fn col_blocks(&self) -> usize {
        self.n / (GEMM_TILE * self.n_block)
    }
}

#[derive(Debug, Clone)]
pub struct GemmKernel {
    cfg: GemmConfig,
}

/// One main-loop input: `m_block` A tiles and `n_block` B tiles.
pub struct GemmInput {
    a: Vec<SharedTile>,
    b: Vec<SharedTile>,
}

impl GemmKernel {
    pub fn new(cfg: GemmConfig) -> Result<Self, KernelError> {
        cfg.validate()?;
        Ok(GemmKernel { cfg })
    }

    pub fn config(&self) -> &GemmConfig {
        &self.cfg
    }

    /// `A` (M x K), `B` (K x N) and a zeroed `C`.
    pub fn globals(&self, a: GlobalTensor, b: GlobalTensor) -> GlobalSet {
        let c = GlobalTensor::zeros([1, 1, self.cfg.m, self.cfg.n], self.cfg.dtype);
        GlobalSet::new().with("A", a).with("B", b).with("C", c)
    }

    /// One consumer per row tile, one producer, and as many input stages (up
    /// to `max_stages`) as shared memory holds.
    pub fn pipeline(&self, max_stages: usize, smem_limit: usize) -> PipelineConfig {
        let stages = (smem_limit / self.input_block_bytes()).clamp(1, max_stages.max(1));
        PipelineConfig::lcsf(self.cfg.m_block, 1, stages).with_smem_limit(smem_limit)
    }
}

fn check_dims(globals: &GlobalSet, name: &str, dims: [usize; 4]) -> Result<(), KernelError> {
    let got = globals.get(name)?.dims();
    if got != dims {
        return Err(KernelError::Invalid(format!("{name} has shape {got:?}, expected {dims:?}")));
    }
    Ok(())
}

impl KernelSpec for GemmKernel {
    type Common = (usize, usize);
    type Input = GemmInput;
    type Output = ();
    type State = Tile;

    fn name(&self) -> &str {
        "gemm"
    }

    fn grid_blocks(&self, globals: &GlobalSet) -> Result<usize, KernelError> {
        let c = &self.cfg;
        check_dims(globals, "A", [1, 1, c.m, c.k])?;
        check_dims(globals, "B", [1, 1, c.k, c.n])?;
        check_dims(globals, "C", [1, 1, c.m, c.n])?;
        Ok(c.grid_blocks)
    }

    fn common_setup(&self, task_id: usize, _globals: &GlobalSet) -> Result<Option<TaskPlan<(usize, usize)>>, KernelError> {
        let c = &self.cfg;
        Ok(
            supergroup_coord(task_id, c.row_blocks(), c.col_blocks(), c.super_m).map(|coord| TaskPlan {
                common: coord,
                iters: c.k / GEMM_TILE,
            }),
        )
    }

    fn input_block_bytes(&self) -> usize {
        (self.cfg.m_block + self.cfg.n_block) * GEMM_TILE * GEMM_TILE * self.cfg.dtype.bytes()
    }

    fn load(&self, ctx: &LoadCtx<'_, (usize, usize)>) -> Result<GemmInput, KernelError> {
        let (row, col) = *ctx.common;
        let (a, b) = (ctx.globals.get("A")?, ctx.globals.get("B")?);
        let fetch = |g: &GlobalTensor, coord: Coord4| -> Result<SharedTile, KernelError> {
            let mut s = SharedTile::new(GEMM_TILE, GEMM_TILE, self.cfg.dtype)?;
            transfer(Source::Global(g, coord), Dest::Shared(&mut s))?;
            Ok(s)
        };
        Ok(GemmInput {
            a: (0..self.cfg.m_block)
                .map(|i| fetch(a, Coord4::new(0, 0, row * self.cfg.m_block + i, ctx.iter)))
                .collect::<Result<_, _>>()?,
            b: (0..self.cfg.n_block)
                .map(|j| fetch(b, Coord4::new(0, 0, ctx.iter, col * self.cfg.n_block + j)))
                .collect::<Result<_, _>>()?,
        })
    }

    fn setup(&self, _ctx: &SetupCtx<'_, (usize, usize)>) -> Result<Tile, KernelError> {
        Ok(Tile::zeros(GEMM_TILE, GEMM_TILE * self.cfg.n_block, Dtype::F32, Major::RowMajor)?)
    }

    fn compute(&self, acc: &mut Tile, input: &GemmInput, ctx: &mut ComputeCtx<'_, (usize, usize), ()>) -> Result<(), KernelError> {
        let a = input.a[ctx.consumer].to_tile(self.cfg.dtype, Major::RowMajor)?;
        let parts = input
            .b
            .iter()
            .map(|s| s.to_tile(self.cfg.dtype, Major::RowMajor))
            .collect::<Result<Vec<_>, _>>()?;
        let b = swap_layout(&Tile::hstack(&parts.iter().collect::<Vec<_>>())?);
        *acc = mma_ab(&a, &b, acc)?;
        ctx.arrive();
        Ok(())
    }

    fn finish(&self, acc: Tile, ctx: &mut FinishCtx<'_, (usize, usize)>) -> Result<(), KernelError> {
        let (row, col) = *ctx.common;
        let out = SharedTile::from_tile(&copy_cast(&acc, self.cfg.dtype))?;
        ctx.write("C", Coord4::new(0, 0, row * self.cfg.m_block + ctx.consumer, col), out);
        Ok(())
    }
}
