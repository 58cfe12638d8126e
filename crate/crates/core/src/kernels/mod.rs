//! The worked kernels (GEMM, attention forward, rotary) as [`KernelSpec`]s,
//! fp64 oracles, and runners that check one against the other.
//!
//! [`KernelSpec`]: crate::lcsf::KernelSpec

pub mod attention;
pub mod gemm;
pub mod manifest;
pub mod oracle;
pub mod rotary;

pub use attention::{temperature_scale, AttentionConfig, AttentionKernel, OnlineSoftmaxState, QO_ROWS};
pub use gemm::{GemmConfig, GemmKernel, GEMM_TILE};
pub use manifest::{
    attention_inputs, random_tensor, rotary_tables, run_attention, run_attention_with, run_gemm, run_rotary, run_rotary_with, ErrorMetric,
    ErrorNorms, KernelManifest, KernelRun, RotaryTables, RunOptions, Tolerance,
};
pub use oracle::{oracle_attention, oracle_gemm, oracle_rotary};
pub use rotary::{RotaryConfig, RotaryKernel, ROTARY_ROWS};
