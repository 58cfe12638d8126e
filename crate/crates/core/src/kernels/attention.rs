use serde::{Deserialize, Serialize};

use crate::lcsf::{ComputeCtx, FinishCtx, GlobalSet, KernelError, KernelSpec, LoadCtx, PipelineConfig, SetupCtx, TaskPlan};
use crate::tiles::{
    copy_cast, div_row, exp2, mma_ab, mma_abt, mul_row, row_max_accum, row_sum_accum, scalar_mul, sub_row, transfer, Coord4, Dest, Dtype,
    GlobalTensor, Major, SharedTile, Source, Tile, TileVector,
};

/// Query rows per consumer.
pub const QO_ROWS: usize = 64;

const LOG2E: f32 = std::f32::consts::LOG2_E;

/// Softmax temperature in base 2: `log2(e) / sqrt(D)`.
pub fn temperature_scale(head_dim: usize) -> f32 {
    if head_dim == 128 {
        0.088_388_346 * LOG2E
    } else {
        0.125 * LOG2E
    }
}

pub fn default_kv_rows(head_dim: usize) -> usize {
    if head_dim == 64 {
        192
    } else {
        128
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub batch: usize,
    pub heads: usize,
    pub seq: usize,
    pub head_dim: usize,
    pub kv_rows: usize,
    /// Consumers per block, each owning `QO_ROWS` query rows.
    pub consumers: usize,
    pub dtype: Dtype,
}

impl AttentionConfig {
    pub fn new(batch: usize, heads: usize, seq: usize, head_dim: usize) -> Self {
        let consumers = (1..=3).rev().find(|c| seq.is_multiple_of(QO_ROWS * c)).unwrap_or(1);
        AttentionConfig {
            batch,
            heads,
            seq,
            head_dim,
            kv_rows: default_kv_rows(head_dim),
            consumers,
            dtype: Dtype::Bf16,
        }
    }

    pub fn with_dtype(mut self, dtype: Dtype) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn with_kv_rows(mut self, rows: usize) -> Self {
        self.kv_rows = rows;
        self
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if ![64, 128].contains(&self.head_dim) {
            return Err(KernelError::Invalid(format!("head dim must be 64 or 128, got {}", self.head_dim)));
        }
        if self.batch == 0 || self.heads == 0 || self.consumers == 0 {
            return Err(KernelError::Invalid("batch, heads and consumers must be positive".into()));
        }
        let q_rows = QO_ROWS * self.consumers;
        if self.kv_rows == 0
            || !self.kv_rows.is_multiple_of(16)
            || self.seq == 0
            || !self.seq.is_multiple_of(self.kv_rows)
            || !self.seq.is_multiple_of(q_rows)
        {
            return Err(KernelError::Invalid(format!(
                "sequence length {} must be a multiple of the KV tile ({}) and of the query block ({q_rows})",
                self.seq, self.kv_rows
            )));
        }
        Ok(())
    }

    pub fn seq_blocks(&self) -> usize {
        self.seq / (QO_ROWS * self.consumers)
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.batch, self.heads, self.seq, self.head_dim]
    }
}

/// Per-consumer running state of the streaming softmax.
#[derive(Debug, Clone)]
pub struct OnlineSoftmaxState {
    pub q: Tile,
    pub o: Tile,
    pub max_vec: TileVector,
    pub norm_vec: TileVector,
}

pub struct KvInput {
    k: SharedTile,
    v: SharedTile,
}

#[derive(Debug, Clone)]
pub struct AttentionKernel {
    cfg: AttentionConfig,
}

impl AttentionKernel {
    pub fn new(cfg: AttentionConfig) -> Result<Self, KernelError> {
        cfg.validate()?;
        Ok(AttentionKernel { cfg })
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.cfg
    }

    pub fn globals(&self, q: GlobalTensor, k: GlobalTensor, v: GlobalTensor) -> GlobalSet {
        let o = GlobalTensor::zeros(self.cfg.dims(), self.cfg.dtype);
        GlobalSet::new().with("Q", q).with("K", k).with("V", v).with("O", o)
    }

    pub fn pipeline(&self, max_stages: usize, smem_limit: usize) -> PipelineConfig {
        let stages = (smem_limit / self.input_block_bytes()).clamp(1, max_stages.max(1));
        PipelineConfig::lcsf(self.cfg.consumers, 1, stages).with_smem_limit(smem_limit)
    }

    fn tau(&self) -> f32 {
        temperature_scale(self.cfg.head_dim)
    }
}

/// (batch, head, query block)
type Block = (usize, usize, usize);

impl KernelSpec for AttentionKernel {
    type Common = Block;
    type Input = KvInput;
    type Output = ();
    type State = OnlineSoftmaxState;

    fn name(&self) -> &str {
        "attention"
    }

    fn grid_blocks(&self, globals: &GlobalSet) -> Result<usize, KernelError> {
        for name in ["Q", "K", "V", "O"] {
            let t = globals.get(name)?;
            if t.dims() != self.cfg.dims() {
                return Err(KernelError::Invalid(format!(
                    "{name} has shape {:?}, expected {:?}",
                    t.dims(),
                    self.cfg.dims()
                )));
            }
            if name != "O" && t.data().iter().any(|x| !x.is_finite()) {
                return Err(KernelError::Invalid(format!("{name} contains non-finite values")));
            }
        }
        Ok(self.cfg.batch * self.cfg.heads * self.cfg.seq_blocks())
    }

    fn common_setup(&self, task_id: usize, _globals: &GlobalSet) -> Result<Option<TaskPlan<Block>>, KernelError> {
        let c = &self.cfg;
        let sb = c.seq_blocks();
        if task_id >= c.batch * c.heads * sb {
            return Ok(None);
        }
        // Query blocks of one head are adjacent so they share K and V in L2.
        let block = (task_id / (sb * c.heads), (task_id / sb) % c.heads, task_id % sb);
        Ok(Some(TaskPlan {
            common: block,
            iters: c.seq / c.kv_rows,
        }))
    }

    fn input_block_bytes(&self) -> usize {
        2 * self.cfg.kv_rows * self.cfg.head_dim * self.cfg.dtype.bytes()
    }

    fn load(&self, ctx: &LoadCtx<'_, Block>) -> Result<KvInput, KernelError> {
        let (b, h, _) = *ctx.common;
        let fetch = |name: &str| -> Result<SharedTile, KernelError> {
            let mut s = SharedTile::new(self.cfg.kv_rows, self.cfg.head_dim, self.cfg.dtype)?;
            transfer(
                Source::Global(ctx.globals.get(name)?, Coord4::new(b, h, ctx.iter, 0)),
                Dest::Shared(&mut s),
            )?;
            Ok(s)
        };
        Ok(KvInput {
            k: fetch("K")?,
            v: fetch("V")?,
        })
    }

    fn setup(&self, ctx: &SetupCtx<'_, Block>) -> Result<OnlineSoftmaxState, KernelError> {
        let (b, h, qb) = *ctx.common;
        let d = self.cfg.head_dim;
        let mut q_smem = SharedTile::new(QO_ROWS, d, self.cfg.dtype)?;
        let row_tile = qb * self.cfg.consumers + ctx.consumer;
        transfer(
            Source::Global(ctx.globals.get("Q")?, Coord4::new(b, h, row_tile, 0)),
            Dest::Shared(&mut q_smem),
        )?;
        Ok(OnlineSoftmaxState {
            q: q_smem.to_tile(self.cfg.dtype, Major::RowMajor)?,
            o: Tile::zeros(QO_ROWS, d, Dtype::F32, Major::RowMajor)?,
            max_vec: TileVector::col(QO_ROWS, f32::NEG_INFINITY)?,
            norm_vec: TileVector::col(QO_ROWS, 0.0)?,
        })
    }

    fn compute(&self, st: &mut OnlineSoftmaxState, kv: &KvInput, ctx: &mut ComputeCtx<'_, Block, ()>) -> Result<(), KernelError> {
        let tau = self.tau();
        let k = kv.k.to_tile(self.cfg.dtype, Major::RowMajor)?;
        let v = kv.v.to_tile(self.cfg.dtype, Major::ColMajor)?;

        let att = Tile::zeros(QO_ROWS, self.cfg.kv_rows, Dtype::F32, Major::RowMajor)?;
        let att = mma_abt(&st.q, &k, &att)?;
        let max_vec_last = st.max_vec.clone();
        st.max_vec = row_max_accum(&att, &st.max_vec)?;
        let att = scalar_mul(&att, tau);
        let max_vec_scaled = st.max_vec.scale(tau);
        let att = exp2(&sub_row(&att, &max_vec_scaled)?);
        let max_vec_last_scaled = max_vec_last.scale(tau).sub(&max_vec_scaled)?.exp2();
        st.norm_vec = st.norm_vec.mul(&max_vec_last_scaled)?;
        st.norm_vec = row_sum_accum(&att, &st.norm_vec)?;
        st.o = mul_row(&st.o, &max_vec_last_scaled)?;
        let att_mma = copy_cast(&att, self.cfg.dtype);
        st.o = mma_ab(&att_mma, &v, &st.o)?;
        ctx.arrive();
        Ok(())
    }

    fn finish(&self, st: OnlineSoftmaxState, ctx: &mut FinishCtx<'_, Block>) -> Result<(), KernelError> {
        let (b, h, qb) = *ctx.common;
        let o = div_row(&st.o, &st.norm_vec)?;
        let out = SharedTile::from_tile(&copy_cast(&o, self.cfg.dtype))?;
        ctx.write("O", Coord4::new(b, h, qb * self.cfg.consumers + ctx.consumer, 0), out);
        Ok(())
    }
}
