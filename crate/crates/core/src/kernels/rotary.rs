use serde::{Deserialize, Serialize};

use crate::lcsf::{ComputeCtx, FinishCtx, GlobalSet, KernelError, KernelSpec, LoadCtx, PipelineConfig, SetupCtx, StoreCtx, TaskPlan};
use crate::tiles::{add, copy_cast, mul, scalar_mul, transfer, Coord4, Dest, Dtype, GlobalTensor, Major, SharedTile, Source, Tile};

/// Sequence rows per consumer.
pub const ROTARY_ROWS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotaryConfig {
    pub batch: usize,
    pub heads: usize,
    pub seq: usize,
    pub head_dim: usize,
    /// Consumers per block, each rotating `ROTARY_ROWS` rows.
    pub consumers: usize,
    pub dtype: Dtype,
}

impl RotaryConfig {
    pub fn new(batch: usize, heads: usize, seq: usize, head_dim: usize) -> Self {
        let consumers = (1..=4).rev().find(|w| seq.is_multiple_of(ROTARY_ROWS * w)).unwrap_or(1);
        RotaryConfig {
            batch,
            heads,
            seq,
            head_dim,
            consumers,
            dtype: Dtype::Bf16,
        }
    }

    pub fn with_dtype(mut self, dtype: Dtype) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if self.head_dim == 0 || !self.head_dim.is_multiple_of(32) {
            return Err(KernelError::Invalid(format!(
                "head dim must be a positive multiple of 32 so each half tiles, got {}",
                self.head_dim
            )));
        }
        if self.batch == 0 || self.heads == 0 || self.consumers == 0 || self.seq == 0 || !self.seq.is_multiple_of(self.block_rows()) {
            return Err(KernelError::Invalid(format!(
                "sequence length {} must be a positive multiple of {} rows",
                self.seq,
                self.block_rows()
            )));
        }
        Ok(())
    }

    pub fn block_rows(&self) -> usize {
        ROTARY_ROWS * self.consumers
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.batch, self.heads, self.seq, self.head_dim]
    }
}

/// One block rotates `block_rows` sequence positions for every (batch, head),
/// keeping its slice of the sin/cos tables in registers.
#[derive(Debug, Clone)]
pub struct RotaryKernel {
    cfg: RotaryConfig,
}

pub struct RotaryState {
    cos: Tile,
    sin: Tile,
}

impl RotaryKernel {
    pub fn new(cfg: RotaryConfig) -> Result<Self, KernelError> {
        cfg.validate()?;
        Ok(RotaryKernel { cfg })
    }

    pub fn config(&self) -> &RotaryConfig {
        &self.cfg
    }

    /// `x` is `[B, H, N, D]`; the tables are `[1, 1, N, D/2]`.
    pub fn globals(&self, x: GlobalTensor, cos: GlobalTensor, sin: GlobalTensor) -> GlobalSet {
        let out = GlobalTensor::zeros(self.cfg.dims(), self.cfg.dtype);
        GlobalSet::new().with("X", x).with("COS", cos).with("SIN", sin).with("OUT", out)
    }

    pub fn pipeline(&self, max_stages: usize, smem_limit: usize) -> PipelineConfig {
        let per_stage = self.input_block_bytes() + self.output_block_bytes();
        let stages = (smem_limit / per_stage).clamp(1, max_stages.max(1));
        PipelineConfig::lcsf(self.cfg.consumers, 1, stages)
            .with_output_stages(stages)
            .with_smem_limit(smem_limit)
    }
}

/// The sequence chunk a block handles.
type Chunk = usize;

impl KernelSpec for RotaryKernel {
    type Common = Chunk;
    type Input = SharedTile;
    type Output = Tile;
    type State = RotaryState;

    fn name(&self) -> &str {
        "rotary"
    }

    fn grid_blocks(&self, globals: &GlobalSet) -> Result<usize, KernelError> {
        let c = &self.cfg;
        let table = [1, 1, c.seq, c.head_dim / 2];
        for (name, dims) in [("X", c.dims()), ("OUT", c.dims()), ("COS", table), ("SIN", table)] {
            let got = globals.get(name)?.dims();
            if got != dims {
                return Err(KernelError::Invalid(format!("{name} has shape {got:?}, expected {dims:?}")));
            }
        }
        for name in ["COS", "SIN"] {
            if globals.get(name)?.data().iter().any(|x| !x.is_finite()) {
                return Err(KernelError::Invalid(format!("{name} table contains non-finite values")));
            }
        }
        Ok(c.seq / c.block_rows())
    }

    fn common_setup(&self, task_id: usize, _globals: &GlobalSet) -> Result<Option<TaskPlan<Chunk>>, KernelError> {
        let c = &self.cfg;
        Ok((task_id < c.seq / c.block_rows()).then_some(TaskPlan {
            common: task_id,
            iters: c.batch * c.heads,
        }))
    }

    fn input_block_bytes(&self) -> usize {
        self.cfg.block_rows() * self.cfg.head_dim * self.cfg.dtype.bytes()
    }

    fn output_block_bytes(&self) -> usize {
        self.input_block_bytes()
    }

    fn uses_output_pipe(&self) -> bool {
        true
    }

    fn load(&self, ctx: &LoadCtx<'_, Chunk>) -> Result<SharedTile, KernelError> {
        let (b, h) = (ctx.iter / self.cfg.heads, ctx.iter % self.cfg.heads);
        let mut s = SharedTile::new(self.cfg.block_rows(), self.cfg.head_dim, self.cfg.dtype)?;
        transfer(
            Source::Global(ctx.globals.get("X")?, Coord4::new(b, h, *ctx.common, 0)),
            Dest::Shared(&mut s),
        )?;
        Ok(s)
    }

    fn setup(&self, ctx: &SetupCtx<'_, Chunk>) -> Result<RotaryState, KernelError> {
        let row_tile = ctx.common * self.cfg.consumers + ctx.consumer;
        let half = self.cfg.head_dim / 2;
        let table = |name: &str| -> Result<Tile, KernelError> {
            let mut t = Tile::zeros(ROTARY_ROWS, half, Dtype::F32, Major::RowMajor)?;
            transfer(
                Source::Global(ctx.globals.get(name)?, Coord4::new(0, 0, row_tile, 0)),
                Dest::Register(&mut t),
            )?;
            Ok(t)
        };
        Ok(RotaryState {
            cos: table("COS")?,
            sin: table("SIN")?,
        })
    }

    fn compute(&self, st: &mut RotaryState, x: &SharedTile, ctx: &mut ComputeCtx<'_, Chunk, Tile>) -> Result<(), KernelError> {
        let half = self.cfg.head_dim / 2;
        let r0 = ctx.consumer * ROTARY_ROWS;
        let x = Tile::from_fn(ROTARY_ROWS, self.cfg.head_dim, Dtype::F32, Major::RowMajor, |r, c| {
            x.get(r0 + r, c).expect("row within the loaded tile")
        })?;
        ctx.arrive();
        let x1 = x.slice_cols(0, half)?;
        let x2 = x.slice_cols(half, half)?;
        let temp1 = mul(&x1, &st.cos)?;
        let temp2 = mul(&x2, &st.cos)?;
        let x2 = scalar_mul(&x2, -1.0);
        let x1 = mul(&x1, &st.sin)?;
        let x2 = mul(&x2, &st.sin)?;
        let temp1 = add(&temp1, &x2)?;
        let temp2 = add(&temp2, &x1)?;
        ctx.emit(copy_cast(&Tile::hstack(&[&temp1, &temp2])?, self.cfg.dtype));
        Ok(())
    }

    fn store(&self, outputs: &[Tile], ctx: &mut StoreCtx<'_, Chunk>) -> Result<(), KernelError> {
        let (b, h) = (ctx.iter / self.cfg.heads, ctx.iter % self.cfg.heads);
        for (consumer, part) in outputs.iter().enumerate() {
            let row_tile = ctx.common * self.cfg.consumers + consumer;
            ctx.write("OUT", Coord4::new(b, h, row_tile, 0), SharedTile::from_tile(part)?);
        }
        ctx.arrive();
        Ok(())
    }

    fn finish(&self, _state: RotaryState, _ctx: &mut FinishCtx<'_, Chunk>) -> Result<(), KernelError> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_fits_consumers() {
        assert_eq!(RotaryConfig::new(1, 1, 64, 128).consumers, 4);
        assert_eq!(RotaryConfig::new(1, 1, 48, 128).consumers, 3);
        assert!(RotaryConfig::new(1, 1, 64, 48).validate().is_err());
    }
}
