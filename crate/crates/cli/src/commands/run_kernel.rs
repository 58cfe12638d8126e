use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::ValueEnum;
use kittensim::kernels::{
    run_attention, run_gemm, run_rotary, AttentionConfig, GemmConfig, KernelRun, RotaryConfig, RotaryTables, RunOptions,
};
use kittensim::lcsf::{Backend, Scheduler};
use kittensim::tiles::io::save_npy;
use kittensim::tiles::Dtype;
use serde::{Deserialize, Serialize};

use super::read_json;
use crate::report::{fmt_f64, Report, Table};
use crate::Env;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelName {
    Gemm,
    Attention,
    Rotary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendName {
    /// Single thread, first enabled step each time.
    InOrder,
    /// Single thread, seeded random interleaving.
    Random,
    /// One OS thread per worker.
    Threads,
}

/// Kernel settings; every field is optional and flags override the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct KernelSettings {
    #[arg(long)]
    pub m: Option<usize>,
    /// GEMM columns, or the sequence length for attention and rotary.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Head dimension.
    #[arg(long, visible_alias = "headdim")]
    pub d: Option<usize>,
    /// Attention KV tile rows.
    #[arg(long)]
    pub kv_rows: Option<usize>,
    #[arg(long)]
    pub dtype: Option<Dtype>,
    /// Rotary with cos = 1 and sin = 0.
    #[arg(long)]
    #[serde(default)]
    pub identity_tables: bool,
    #[arg(long, value_enum)]
    pub backend: Option<BackendName>,
    /// Upper bound on input stages (shared memory permitting).
    #[arg(long)]
    pub max_stages: Option<usize>,
}

impl KernelSettings {
    fn overlay(self, flags: &KernelSettings) -> Self {
        KernelSettings {
            m: flags.m.or(self.m),
            n: flags.n.or(self.n),
            k: flags.k.or(self.k),
            batch: flags.batch.or(self.batch),
            heads: flags.heads.or(self.heads),
            d: flags.d.or(self.d),
            kv_rows: flags.kv_rows.or(self.kv_rows),
            dtype: flags.dtype.or(self.dtype),
            identity_tables: flags.identity_tables || self.identity_tables,
            backend: flags.backend.or(self.backend),
            max_stages: flags.max_stages.or(self.max_stages),
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(value_enum)]
    kernel: KernelName,
    /// JSON file of kernel settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: KernelSettings,
    /// Also write the output tensor (`.npy`) and the manifest here.
    #[arg(long)]
    save_dir: Option<PathBuf>,
}

#[derive(Serialize)]
struct Config {
    kernel: KernelName,
    settings: KernelSettings,
}

pub fn run(args: &Args, env: &Env) -> Result<Report> {
    let base = match &args.config {
        Some(path) => read_json::<KernelSettings>(path)?,
        None => KernelSettings::default(),
    };
    let s = base.overlay(&args.settings);
    let dtype = s.dtype.unwrap_or(Dtype::F32);
    let backend = match s.backend.unwrap_or(BackendName::InOrder) {
        BackendName::InOrder => Backend::Interleaved(Scheduler::InOrder),
        BackendName::Random => Backend::Interleaved(Scheduler::Random { seed: env.seed }),
        BackendName::Threads => Backend::Threads,
    };
    let opts = RunOptions {
        max_stages: s.max_stages.unwrap_or(4),
        ..RunOptions::default()
    }
    .with_backend(backend);
    let run: KernelRun = match args.kernel {
        KernelName::Gemm => {
            let (m, n, k) = (s.m.unwrap_or(128), s.n.unwrap_or(128), s.k.unwrap_or(128));
            run_gemm(GemmConfig::fitted(m, n, k).with_dtype(dtype), env.seed, &opts)?
        }
        KernelName::Attention => {
            let mut cfg =
                AttentionConfig::new(s.batch.unwrap_or(1), s.heads.unwrap_or(1), s.n.unwrap_or(384), s.d.unwrap_or(64)).with_dtype(dtype);
            if let Some(rows) = s.kv_rows {
                cfg = cfg.with_kv_rows(rows);
            }
            run_attention(cfg, env.seed, &opts)?
        }
        KernelName::Rotary => {
            let cfg =
                RotaryConfig::new(s.batch.unwrap_or(1), s.heads.unwrap_or(1), s.n.unwrap_or(64), s.d.unwrap_or(128)).with_dtype(dtype);
            let tables = if s.identity_tables {
                RotaryTables::Identity
            } else {
                RotaryTables::Random
            };
            run_rotary(cfg, env.seed, tables, &opts)?
        }
    };
    if let Some(dir) = &args.save_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        save_npy(&run.output, dir.join("output.npy"))?;
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&run.manifest)? + "\n")?;
    }
    let m = &run.manifest;
    let mut table = Table::new(&[
        "kernel",
        "dtype",
        "seed",
        "blocks",
        "max_abs_error",
        "rel_fro_error",
        "tolerance",
        "passed",
    ]);
    table.push(vec![
        m.kernel.clone(),
        format!("{:?}", m.dtype).to_lowercase(),
        m.seed.to_string(),
        m.blocks.to_string(),
        fmt_f64(m.errors.max_abs_error),
        fmt_f64(m.errors.rel_fro_error),
        format!("{:?} {}", m.tolerance.metric, m.tolerance.bound),
        m.passed.to_string(),
    ]);
    let ok = m.passed;
    let config = Config {
        kernel: args.kernel,
        settings: s,
    };
    Ok(Report::new(config, &run.manifest, table)?.with_ok(ok))
}
