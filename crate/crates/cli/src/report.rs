use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// Flat rows for CSV output.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

/// What a command produced, before it is wrapped in an envelope.
pub struct Report {
    pub config: Value,
    pub results: Value,
    pub table: Table,
    /// False makes the process exit nonzero after writing the report.
    pub ok: bool,
}

impl Report {
    pub fn new(config: impl Serialize, results: impl Serialize, table: Table) -> Result<Self> {
        Ok(Report {
            config: serde_json::to_value(config)?,
            results: serde_json::to_value(results)?,
            table,
            ok: true,
        })
    }

    pub fn with_ok(mut self, ok: bool) -> Self {
        self.ok = ok;
        self
    }
}

#[derive(Debug, Serialize)]
pub struct ReportEnvelope<'a> {
    pub command: &'a str,
    pub tool_version: &'a str,
    pub seed: u64,
    pub config: &'a Value,
    pub results: &'a Value,
    /// `None` under `--no-wall-time`, so whole files can be diffed.
    pub wall_time_s: Option<f64>,
}

pub fn render(envelope: &ReportEnvelope<'_>, table: &Table, format: Format) -> Result<String> {
    match format {
        Format::Json => Ok(serde_json::to_string_pretty(envelope)? + "\n"),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&table.header)?;
            for row in &table.rows {
                w.write_record(row)?;
            }
            Ok(String::from_utf8(w.into_inner().context("flushing CSV")?)?)
        }
    }
}

pub fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:e}")
}
