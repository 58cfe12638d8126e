use std::collections::BTreeMap;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{AttentionConfig, AttentionKernel};
use super::gemm::{GemmConfig, GemmKernel};
use super::oracle::{oracle_attention, oracle_gemm, oracle_rotary};
use super::rotary::{RotaryConfig, RotaryKernel};
use crate::lcsf::{execute_functional, Backend, GlobalSet, KernelSpec, LcsfError, PipelineConfig, Scheduler, Trace};
use crate::tiles::{Dtype, GlobalTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorNorms {
    pub max_abs_error: f64,
    /// `||got - want||_F / ||want||_F`, or the absolute norm when `want` is zero.
    pub rel_fro_error: f64,
}

impl ErrorNorms {
    pub fn compare(got: &[f32], want: &[f64]) -> Self {
        assert_eq!(got.len(), want.len(), "compared tensors differ in size");
        let mut max_abs: f64 = 0.0;
        let (mut diff2, mut ref2) = (0.0, 0.0);
        for (&g, &w) in got.iter().zip(want) {
            let d = g as f64 - w;
            max_abs = max_abs.max(d.abs());
            diff2 += d * d;
            ref2 += w * w;
        }
        let rel = if ref2 > 0.0 { (diff2 / ref2).sqrt() } else { diff2.sqrt() };
        ErrorNorms {
            max_abs_error: max_abs,
            rel_fro_error: rel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMetric {
    MaxAbs,
    RelFro,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub metric: ErrorMetric,
    pub bound: f64,
}

impl Tolerance {
    pub fn max_abs(bound: f64) -> Self {
        Tolerance {
            metric: ErrorMetric::MaxAbs,
            bound,
        }
    }

    pub fn rel_fro(bound: f64) -> Self {
        Tolerance {
            metric: ErrorMetric::RelFro,
            bound,
        }
    }

    pub fn accepts(&self, e: &ErrorNorms) -> bool {
        match self.metric {
            ErrorMetric::MaxAbs => e.max_abs_error <= self.bound,
            ErrorMetric::RelFro => e.rel_fro_error <= self.bound,
        }
    }

    fn for_dtype(dtype: Dtype, fp32_max_abs: f64) -> Self {
        match dtype {
            Dtype::F32 => Self::max_abs(fp32_max_abs),
            Dtype::Bf16 => Self::rel_fro(2e-2),
        }
    }
}

/// Result manifest of one kernel run against its oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelManifest {
    pub kernel: String,
    pub seed: u64,
    pub dtype: Dtype,
    pub shapes: BTreeMap<String, [usize; 4]>,
    pub pipeline: PipelineConfig,
    pub blocks: usize,
    pub errors: ErrorNorms,
    pub tolerance: Tolerance,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct KernelRun {
    pub manifest: KernelManifest,
    pub output: GlobalTensor,
    pub traces: Vec<Trace>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub backend: Backend,
    pub max_stages: usize,
    pub smem_limit: usize,
    /// Replaces the kernel's own pipeline choice.
    pub pipeline: Option<PipelineConfig>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            backend: Backend::Interleaved(Scheduler::InOrder),
            max_stages: 4,
            smem_limit: 227 * 1024,
            pipeline: None,
        }
    }
}

impl RunOptions {
    pub fn with_backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }

    pub fn with_pipeline(mut self, pipeline: PipelineConfig) -> Self {
        self.pipeline = Some(pipeline);
        self
    }
}

/// Uniform values in `[-1, 1)`, rounded to `dtype`.
pub fn random_tensor(dims: [usize; 4], dtype: Dtype, rng: &mut ChaCha8Rng) -> GlobalTensor {
    let data = (0..dims.iter().product::<usize>())
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    GlobalTensor::from_vec(dims, dtype, data).expect("length matches dims")
}

fn widen(t: &GlobalTensor) -> Vec<f64> {
    t.data().iter().map(|&x| x as f64).collect()
}

/// The contiguous `[rows, cols]` matrix at `(b, h)`.
fn head(t: &GlobalTensor, b: usize, h: usize) -> Vec<f64> {
    let [_, heads, rows, cols] = t.dims();
    let start = (b * heads + h) * rows * cols;
    t.data()[start..start + rows * cols].iter().map(|&x| x as f64).collect()
}

#[allow(clippy::too_many_arguments)]
fn finish_run<K: KernelSpec>(
    kernel: &K,
    globals: GlobalSet,
    output: &str,
    pipeline: PipelineConfig,
    opts: &RunOptions,
    seed: u64,
    dtype: Dtype,
    oracle: impl FnOnce(&GlobalSet) -> Vec<f64>,
    tolerance: Tolerance,
) -> Result<KernelRun, LcsfError> {
    let want = oracle(&globals);
    let blocks = kernel.grid_blocks(&globals)?;
    let shapes = globals
        .names()
        .map(|n| (n.to_string(), globals.get(n).expect("named tensor").dims()))
        .collect();
    let run = execute_functional(kernel, globals, &pipeline, opts.backend)?;
    let out = run.globals.get(output)?.clone();
    let errors = ErrorNorms::compare(out.data(), &want);
    Ok(KernelRun {
        manifest: KernelManifest {
            kernel: kernel.name().to_string(),
            seed,
            dtype,
            shapes,
            pipeline,
            blocks,
            errors,
            tolerance,
            passed: tolerance.accepts(&errors),
        },
        output: out,
        traces: run.traces,
    })
}

pub fn run_gemm(cfg: GemmConfig, seed: u64, opts: &RunOptions) -> Result<KernelRun, LcsfError> {
    let kernel = GemmKernel::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_tensor([1, 1, cfg.m, cfg.k], cfg.dtype, &mut rng);
    let b = random_tensor([1, 1, cfg.k, cfg.n], cfg.dtype, &mut rng);
    let pipeline = opts.pipeline.unwrap_or_else(|| kernel.pipeline(opts.max_stages, opts.smem_limit));
    let oracle = |g: &GlobalSet| {
        let (a, b) = (g.get("A").expect("A"), g.get("B").expect("B"));
        oracle_gemm(&widen(a), &widen(b), cfg.m, cfg.n, cfg.k)
    };
    let globals = kernel.globals(a, b);
    finish_run(
        &kernel,
        globals,
        "C",
        pipeline,
        opts,
        seed,
        cfg.dtype,
        oracle,
        Tolerance::for_dtype(cfg.dtype, 1e-4),
    )
}

pub fn attention_inputs(cfg: &AttentionConfig, seed: u64) -> [GlobalTensor; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [(); 3].map(|_| random_tensor(cfg.dims(), cfg.dtype, &mut rng))
}

pub fn run_attention(cfg: AttentionConfig, seed: u64, opts: &RunOptions) -> Result<KernelRun, LcsfError> {
    let [q, k, v] = attention_inputs(&cfg, seed);
    run_attention_with(cfg, q, k, v, seed, opts)
}

/// Runs attention on caller-supplied inputs; `seed` is only echoed.
pub fn run_attention_with(
    cfg: AttentionConfig,
    q: GlobalTensor,
    k: GlobalTensor,
    v: GlobalTensor,
    seed: u64,
    opts: &RunOptions,
) -> Result<KernelRun, LcsfError> {
    let kernel = AttentionKernel::new(cfg)?;
    let pipeline = opts.pipeline.unwrap_or_else(|| kernel.pipeline(opts.max_stages, opts.smem_limit));
    let oracle = |g: &GlobalSet| {
        let (q, k, v) = (g.get("Q").expect("Q"), g.get("K").expect("K"), g.get("V").expect("V"));
        let mut out = Vec::with_capacity(q.data().len());
        for b in 0..cfg.batch {
            for h in 0..cfg.heads {
                out.extend(oracle_attention(
                    &head(q, b, h),
                    &head(k, b, h),
                    &head(v, b, h),
                    cfg.seq,
                    cfg.seq,
                    cfg.head_dim,
                ));
            }
        }
        out
    };
    let globals = kernel.globals(q, k, v);
    finish_run(
        &kernel,
        globals,
        "O",
        pipeline,
        opts,
        seed,
        cfg.dtype,
        oracle,
        Tolerance::for_dtype(cfg.dtype, 1e-5),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotaryTables {
    /// Angles uniform in `[-pi, pi)`.
    Random,
    /// cos = 1, sin = 0.
    Identity,
}

/// `[COS, SIN]` tables of shape `[1, 1, N, D/2]`.
pub fn rotary_tables(cfg: &RotaryConfig, tables: RotaryTables, rng: &mut ChaCha8Rng) -> [GlobalTensor; 2] {
    let dims = [1, 1, cfg.seq, cfg.head_dim / 2];
    let len = cfg.seq * cfg.head_dim / 2;
    let angles: Vec<f32> = match tables {
        RotaryTables::Random => (0..len)
            .map(|_| rng.random_range(-std::f32::consts::PI..std::f32::consts::PI))
            .collect(),
        RotaryTables::Identity => vec![0.0; len],
    };
    let table =
        |f: fn(f32) -> f32| GlobalTensor::from_vec(dims, cfg.dtype, angles.iter().map(|&a| f(a)).collect()).expect("length matches dims");
    [table(f32::cos), table(f32::sin)]
}

pub fn run_rotary(cfg: RotaryConfig, seed: u64, tables: RotaryTables, opts: &RunOptions) -> Result<KernelRun, LcsfError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(cfg.dims(), cfg.dtype, &mut rng);
    let [cos, sin] = rotary_tables(&cfg, tables, &mut rng);
    let tolerance = match tables {
        RotaryTables::Identity => Tolerance::max_abs(0.0),
        RotaryTables::Random => Tolerance::for_dtype(cfg.dtype, 1e-5),
    };
    run_rotary_with(cfg, x, cos, sin, seed, tolerance, opts)
}

pub fn run_rotary_with(
    cfg: RotaryConfig,
    x: GlobalTensor,
    cos: GlobalTensor,
    sin: GlobalTensor,
    seed: u64,
    tolerance: Tolerance,
    opts: &RunOptions,
) -> Result<KernelRun, LcsfError> {
    let kernel = RotaryKernel::new(cfg)?;
    let pipeline = opts.pipeline.unwrap_or_else(|| kernel.pipeline(opts.max_stages, opts.smem_limit));
    let oracle = |g: &GlobalSet| {
        let x = g.get("X").expect("X");
        let (cos, sin) = (widen(g.get("COS").expect("COS")), widen(g.get("SIN").expect("SIN")));
        let mut out = Vec::with_capacity(x.data().len());
        for b in 0..cfg.batch {
            for h in 0..cfg.heads {
                out.extend(oracle_rotary(&head(x, b, h), &cos, &sin, cfg.seq, cfg.head_dim));
            }
        }
        out
    };
    let globals = kernel.globals(x, cos, sin);
    finish_run(&kernel, globals, "OUT", pipeline, opts, seed, cfg.dtype, oracle, tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_norms() {
        let e = ErrorNorms::compare(&[1.0, 2.0], &[1.0, 2.5]);
        assert_eq!(e.max_abs_error, 0.5);
        assert!((e.rel_fro_error - 0.5 / (1.0f64 + 6.25).sqrt()).abs() < 1e-12);
        assert!(Tolerance::max_abs(0.5).accepts(&e));
        assert!(!Tolerance::rel_fro(0.1).accepts(&e));
    }

    #[test]
    fn random_tensor_is_seeded() {
        let draw = |s| random_tensor([1, 1, 4, 4], Dtype::F32, &mut ChaCha8Rng::seed_from_u64(s));
        assert_eq!(draw(3).data(), draw(3).data());
        assert_ne!(draw(3).data(), draw(4).data());
        assert!(draw(5).data().iter().all(|x| (-1.0..1.0).contains(x)));
    }
}
