//! JSON reports and CSV trajectory dumps.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use nalgebra::DVector;
use selfdual::pathspace::{Discretization, FunctionalInfo, Path as TimePath};
use selfdual::problems::ProblemPreset;
use selfdual::solver::{SolveOptions, SolveReport};

use crate::config::Thresholds;

#[derive(Debug, Serialize)]
pub struct RunReport<'a> {
    pub schema: u32,
    pub preset: &'a str,
    pub functional: &'a FunctionalInfo,
    pub dim: usize,
    pub intervals: usize,
    pub horizon: f64,
    pub seed: u64,
    pub thresholds: &'a Thresholds,
    /// The resolved problem, enough to rebuild the functional.
    pub problem: &'a ProblemPreset,
    pub solver: &'a SolveOptions,
    /// Certified and within every threshold.
    pub passed: bool,
    pub failed_checks: Vec<String>,
    #[serde(flatten)]
    pub solve: &'a SolveReport,
}

/// Names of the thresholds the report misses.
pub fn failed_checks(report: &SolveReport, thresholds: &Thresholds) -> Vec<String> {
    let mut failed = Vec::new();
    if !report.certified {
        failed.push("certificate".to_string());
    }
    if !(report.boundary_residual <= thresholds.boundary) {
        failed.push("boundary".to_string());
    }
    if matches!(report.mild_residual, Some(r) if !(r <= thresholds.mild)) {
        failed.push("mild".to_string());
    }
    if matches!(report.oracle_error, Some(r) if !(r <= thresholds.oracle)) {
        failed.push("oracle".to_string());
    }
    failed
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// One row per node: `t,component_0,...`, 17 significant digits.
pub fn write_trajectory(path: &Path, disc: &Discretization, trajectory: &TimePath) -> Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let mut header = vec!["t".to_string()];
    header.extend((0..trajectory.dim()).map(|i| format!("component_{i}")));
    out.write_record(&header)?;
    for (k, node) in trajectory.nodes().iter().enumerate() {
        let mut row = vec![format!("{:.16e}", disc.node_time(k))];
        row.extend(node.iter().map(|v| format!("{v:.16e}")));
        out.write_record(&row)?;
    }
    out.into_inner().map_err(|e| e.into_error())?.flush()?;
    Ok(())
}

/// Reads a dump written by [`write_trajectory`]; returns node times and states.
pub fn read_trajectory(path: &Path) -> Result<(Vec<f64>, TimePath)> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("t") {
        bail!("{}: first column must be `t`", path.display());
    }
    let dim = headers.len() - 1;
    let mut times = Vec::new();
    let mut nodes = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let values: Vec<f64> = record
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("{}: row {}", path.display(), line + 1))?;
        times.push(values[0]);
        nodes.push(DVector::from_iterator(dim, values[1..].iter().copied()));
    }
    Ok((times, TimePath::new(nodes)?))
}
