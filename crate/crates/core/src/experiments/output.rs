//! CSV and JSON emission. Output bytes depend only on the configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::MomentSeries;
use crate::error::{CboError, Result};

use super::{ExperimentResult, VERSION};

/// Shortest round-trip decimal; scientific notation outside `[1e-5, 1e16)`.
pub fn format_float(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-5..1e16).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Mean series across replicates, point by point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub name: String,
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n: Vec<usize>,
}

impl Aggregate {
    /// Averages series sharing one time grid, in the given order.
    pub fn from_series(name: &str, runs: &[MomentSeries]) -> Result<Self> {
        let first = runs
            .first()
            .ok_or_else(|| CboError::Input(format!("no runs to aggregate for {name}")))?;
        if runs.iter().any(|r| r.times != first.times) {
            return Err(CboError::Input(format!(
                "runs of {name} do not share a time grid"
            )));
        }
        let len = first.len();
        let r = runs.len();
        let mut mean = vec![0.0; len];
        let mut stderr = vec![0.0; len];
        for i in 0..len {
            let column: Vec<f64> = runs.iter().map(|s| s.values[i]).collect();
            let e = crate::analysis::estimate(&column);
            mean[i] = e.mean;
            stderr[i] = e.stderr;
        }
        Ok(Aggregate {
            name: name.to_string(),
            times: first.times.clone(),
            mean,
            stderr,
            n: vec![r; len],
        })
    }
}

/// A named set of per-replicate series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesSet {
    pub name: String,
    pub runs: Vec<MomentSeries>,
}

/// A plain numeric table, e.g. one row per ladder size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

fn header(config_echo: &str) -> String {
    format!("# cbo-core {VERSION}\n# config {config_echo}\n")
}

pub fn series_csv(set: &SeriesSet, config_echo: &str) -> String {
    let mut out = header(config_echo);
    out.push_str("replicate,t,value\n");
    for run in &set.runs {
        for (t, v) in run.times.iter().zip(&run.values) {
            let _ = writeln!(
                out,
                "{},{},{}",
                run.replicate,
                format_float(*t),
                format_float(*v)
            );
        }
    }
    out
}

pub fn aggregate_csv(agg: &Aggregate, config_echo: &str) -> String {
    let mut out = header(config_echo);
    out.push_str("t,mean,stderr,n\n");
    for i in 0..agg.times.len() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            format_float(agg.times[i]),
            format_float(agg.mean[i]),
            format_float(agg.stderr[i]),
            agg.n[i]
        );
    }
    out
}

pub fn table_csv(table: &Table, config_echo: &str) -> String {
    let mut out = header(config_echo);
    out.push_str(&table.columns.join(","));
    out.push('\n');
    for row in &table.rows {
        let cells: Vec<String> = row.iter().map(|v| format_float(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn write_file(path: PathBuf, contents: &str) -> Result<PathBuf> {
    fs::write(&path, contents).map_err(|e| CboError::io(&path, e))?;
    Ok(path)
}

/// Writes every artifact of `result` into `dir` and returns the paths written.
pub fn write_result(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| CboError::io(dir, e))?;
    let echo = result.config.echo();
    let mut written = Vec::new();
    for set in &result.series {
        written.push(write_file(
            dir.join(format!("{}.csv", set.name)),
            &series_csv(set, &echo),
        )?);
    }
    for agg in &result.aggregates {
        written.push(write_file(
            dir.join(format!("{}_mean.csv", agg.name)),
            &aggregate_csv(agg, &echo),
        )?);
    }
    for table in &result.tables {
        written.push(write_file(
            dir.join(format!("{}.csv", table.name)),
            &table_csv(table, &echo),
        )?);
    }
    if let Some(report) = &result.constants {
        let text =
            serde_json::to_string_pretty(report).map_err(|e| CboError::Input(e.to_string()))?;
        written.push(write_file(dir.join("constants.json"), &(text + "\n"))?);
    }
    let text = serde_json::to_string_pretty(&result.summary_document())
        .map_err(|e| CboError::Input(e.to_string()))?;
    written.push(write_file(dir.join("summary.json"), &(text + "\n"))?);
    Ok(written)
}
