use anyhow::Result;
use clap::ValueEnum;
use kittensim::layouts::{analyze_conflicts, select_swizzle, AccessPattern, ConflictReport, SharedLayout, SwizzleMode};
use kittensim::tiles::Dtype;
use serde::Serialize;

use crate::report::{Report, Table};
use crate::Env;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// 16-byte fragments of 16 rows, as a tensor-core load reads them.
    Tensorcore,
    /// One word per row down a column.
    Column,
    /// 32 consecutive words along a row.
    Row,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    #[arg(long, default_value = "bf16")]
    dtype: Dtype,
    /// naive, padded, padded:<bytes>, rowxor, sw32, sw64 or sw128; omitted
    /// means the widest valid swizzle.
    #[arg(long)]
    mode: Option<SwizzleMode>,
    #[arg(long, value_enum, default_value = "tensorcore")]
    pattern: Pattern,
    /// Column for `column`, start column for `row`.
    #[arg(long, default_value_t = 0)]
    col: usize,
    /// Row for `row`.
    #[arg(long, default_value_t = 0)]
    row: usize,
}

#[derive(Serialize)]
struct Config {
    rows: usize,
    cols: usize,
    dtype: Dtype,
    mode: Option<SwizzleMode>,
    pattern: Pattern,
    access: String,
}

#[derive(Serialize)]
struct Results {
    mode: SwizzleMode,
    /// Set when the mode was chosen automatically.
    selected: Option<SwizzleMode>,
    bijective: bool,
    conflicts: ConflictReport,
}

pub fn run(args: &Args, _env: &Env) -> Result<Report> {
    let eb = args.dtype.bytes();
    let selected = match args.mode {
        Some(_) => None,
        None => Some(select_swizzle(args.rows, args.cols, eb)?),
    };
    let mode = args.mode.or(selected).expect("mode given or selected");
    let layout = SharedLayout::new(args.rows, args.cols, eb, mode)?;
    let access = match args.pattern {
        Pattern::Tensorcore => AccessPattern::TensorCoreSegments,
        Pattern::Column => AccessPattern::ColumnWord { col: args.col },
        Pattern::Row => AccessPattern::RowLinear {
            row: args.row,
            start_col: args.col,
        },
    };
    let conflicts = analyze_conflicts(&layout, &access)?;
    let mut table = Table::new(&[
        "rows",
        "cols",
        "dtype",
        "mode",
        "pattern",
        "max_way",
        "per_phase_way",
        "worst_bank",
        "misaligned_segments",
    ]);
    table.push(vec![
        args.rows.to_string(),
        args.cols.to_string(),
        format!("{:?}", args.dtype).to_lowercase(),
        serde_json::to_string(&mode)?.trim_matches('"').to_string(),
        access.to_string(),
        conflicts.max_way.to_string(),
        conflicts.per_phase_way.iter().map(usize::to_string).collect::<Vec<_>>().join(" "),
        conflicts.worst_bank.to_string(),
        conflicts.misaligned_segments.to_string(),
    ]);
    let config = Config {
        rows: args.rows,
        cols: args.cols,
        dtype: args.dtype,
        mode: args.mode,
        pattern: args.pattern,
        access: access.to_string(),
    };
    let results = Results {
        mode,
        selected,
        bijective: kittensim::layouts::check_bijective(&layout),
        conflicts,
    };
    Report::new(config, results, table)
}
