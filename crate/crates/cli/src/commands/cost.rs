use std::path::PathBuf;

use anyhow::{bail, Result};
use kittensim::machine::{estimate_cost, CostTerm, WorkProfile};
use serde::Serialize;

use super::read_json;
use crate::report::{fmt_f64, Report, Table};
use crate::Env;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// A WorkProfile JSON file.
    #[arg(long, conflicts_with = "gemm")]
    profile: Option<PathBuf>,
    /// Dense bf16 GEMM as M,N,K.
    #[arg(long, value_delimiter = ',')]
    gemm: Option<Vec<u64>>,
}

#[derive(Serialize)]
struct Config {
    source: String,
    profile: WorkProfile,
}

pub fn run(args: &Args, env: &Env) -> Result<Report> {
    let (source, profile) = match (&args.profile, &args.gemm) {
        (Some(path), _) => (path.display().to_string(), read_json::<WorkProfile>(path)?),
        (None, Some(d)) if d.len() != 3 => bail!("--gemm takes exactly M,N,K"),
        (None, Some(d)) => (format!("gemm {}x{}x{}", d[0], d[1], d[2]), WorkProfile::gemm_bf16(d[0], d[1], d[2])),
        (None, None) => bail!("give --profile FILE or --gemm M,N,K"),
    };
    let cost = estimate_cost(&profile, &env.machine)?;
    let mut table = Table::new(&["term", "seconds"]);
    for term in CostTerm::TIE_ORDER {
        table.push(vec![term.to_string(), fmt_f64(cost.terms.get(term))]);
    }
    table.push(vec!["setup".into(), fmt_f64(cost.terms.setup)]);
    table.push(vec!["sync".into(), fmt_f64(cost.terms.sync)]);
    table.push(vec!["overall".into(), fmt_f64(cost.overall)]);
    table.push(vec![format!("bound_by={}", cost.bound_by), String::new()]);
    Report::new(Config { source, profile }, cost, table)
}
