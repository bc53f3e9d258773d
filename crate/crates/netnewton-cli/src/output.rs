//! Artifact writers. Every number is formatted with the default float
//! formatting so repeated runs of the same config produce byte-identical
//! files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use netnewton::analysis::{GapRow, Reference};
use netnewton::engine::{ActivationMode, Trace};
use netnewton::newton::TheoryConstants;
use netnewton::{Error, Result};

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Per-seed trace. `weighted` carries the weighted error at snapshot
/// activations; other rows leave the column empty, as does the active
/// agent at `t = 0` and for synchronous iterations.
pub fn write_trace_csv(
    path: &Path,
    trace: &Trace,
    reference: &Reference,
    weighted: &BTreeMap<usize, f64>,
) -> Result<()> {
    let f0 = trace
        .records
        .first()
        .map(|r| r.f_value)
        .unwrap_or(reference.f_star);
    let denom = (f0 - reference.f_star).abs();
    let mut out = String::from("t,active_agent,F,rel_err,weighted_err,elapsed_time_units\n");
    for rec in &trace.records {
        let active = rec.active.map(|i| i.to_string()).unwrap_or_default();
        let rel = if denom > 0.0 {
            ((rec.f_value - reference.f_star).abs() / denom).to_string()
        } else {
            "0".to_string()
        };
        let w = weighted
            .get(&rec.t)
            .map(|v| v.to_string())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            rec.t, active, rec.f_value, rel, w, rec.elapsed
        );
    }
    write_file(path, &out)
}

/// Cross-seed gap statistics per activation.
pub fn write_aggregate_csv(path: &Path, rows: &[GapRow]) -> Result<()> {
    let mut out = String::from("t,mean_gap,min_gap,max_gap,mean_elapsed\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.t, row.mean_gap, row.min_gap, row.max_gap, row.mean_elapsed
        );
    }
    write_file(path, &out)
}

/// Flat `key = value` report of the theory constants and the reference
/// solve, for cross-checking runs by hand.
pub fn write_constants_report(
    path: &Path,
    constants: &TheoryConstants,
    eps_configured: f64,
    mode: ActivationMode,
    reference: Option<&Reference>,
) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "mode = {mode}");
    let _ = writeln!(out, "eps_configured = {eps_configured}");
    for (key, value) in constants.flat_report() {
        let _ = writeln!(out, "{key} = {value}");
    }
    if let Some(reference) = reference {
        let _ = writeln!(out, "f_star = {}", reference.f_star);
        let _ = writeln!(out, "reference_residual = {}", reference.solver_residual);
    }
    write_file(path, &out)
}

/// Mean relative error per activation, one column per algorithm, aligned
/// on the shortest series.
pub fn write_plot_data(path: &Path, series: &[(String, Vec<f64>)]) -> Result<()> {
    let mut out = String::from("# t");
    for (name, _) in series {
        let _ = write!(out, " {name}");
    }
    out.push('\n');
    let horizon = series.iter().map(|(_, v)| v.len()).min().unwrap_or(0);
    for t in 0..horizon {
        let _ = write!(out, "{t}");
        for (_, values) in series {
            let _ = write!(out, " {}", values[t]);
        }
        out.push('\n');
    }
    write_file(path, &out)
}

/// A ready-to-run script for the plot data file next to it.
pub fn write_gnuplot_script(path: &Path, dat_file: &str, names: &[String]) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "set terminal pngcairo size 900,600");
    let _ = writeln!(out, "set output 'rel_err.png'");
    let _ = writeln!(out, "set logscale y");
    let _ = writeln!(out, "set xlabel 'activations / iterations'");
    let _ = writeln!(out, "set ylabel 'mean relative error'");
    let _ = writeln!(out, "set key top right");
    let plots: Vec<String> = names
        .iter()
        .enumerate()
        .map(|(i, name)| format!("'{dat_file}' using 1:{} with lines title '{name}'", i + 2))
        .collect();
    let _ = writeln!(out, "plot {}", plots.join(", \\\n     "));
    write_file(path, &out)
}

/// One sweep cell. Step statistics cover only the seeds that reached the
/// target; `status` records censoring or a solver error.
pub struct SweepRow {
    pub topology: String,
    pub n: usize,
    pub seeds: usize,
    pub reached: usize,
    pub mean_steps: Option<f64>,
    pub min_steps: Option<usize>,
    pub max_steps: Option<usize>,
    pub eps: Option<f64>,
    pub rho: Option<f64>,
    pub beta: Option<f64>,
    pub status: String,
}

impl SweepRow {
    pub fn failed(topology: String, n: usize, message: String) -> SweepRow {
        SweepRow {
            topology,
            n,
            seeds: 0,
            reached: 0,
            mean_steps: None,
            min_steps: None,
            max_steps: None,
            eps: None,
            rho: None,
            beta: None,
            status: format!("error: {message}"),
        }
    }
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
        v.as_ref().map(|x| x.to_string()).unwrap_or_default()
    }
    let mut out = String::from(
        "topology,n,seeds,reached,mean_steps,min_steps,max_steps,eps,rho,beta,status\n",
    );
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            row.topology,
            row.n,
            row.seeds,
            row.reached,
            opt(&row.mean_steps),
            opt(&row.min_steps),
            opt(&row.max_steps),
            opt(&row.eps),
            opt(&row.rho),
            opt(&row.beta),
            // The status is free text in the last column; keep it free of
            // the delimiter.
            row.status.replace(',', ";")
        );
    }
    write_file(path, &out)
}
