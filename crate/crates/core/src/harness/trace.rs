//! Trace rows and their CSV form.
//!
//! Floats are written with 9 significant digits in scientific notation, so
//! a trace file is a deterministic function of the scenario. A JSON sidecar
//! (`<trace>.meta.json`) echoes the scenario.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::scenario::Scenario;
use crate::linalg::Vector;
use crate::scf::ActiveCase;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub position: Vector,
    pub velocity: Vector,
    pub x_vd: Vector,
    pub u_ref: Vector,
    pub u: Vector,
    pub force: Vector,
    /// Smallest barrier value at the start of the step (∞ without barriers).
    pub h_min: f64,
    /// Tank level at the start of the step.
    pub energy: f64,
    /// Tank flow applied during the step.
    pub epsilon: f64,
    /// Ledger bound minus ∫‖F‖² after the step.
    pub ledger_margin: f64,
    pub beta_extra: f64,
    pub active_case: ActiveCase,
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub scenario: Scenario,
    pub mode: String,
    pub steps: usize,
    pub fallback_steps: usize,
    pub aborted: Option<String>,
    pub columns: Vec<String>,
}

impl TraceMeta {
    pub fn new(scenario: &Scenario, rows: &[TraceRow], aborted: Option<String>) -> Self {
        Self {
            scenario: scenario.clone(),
            mode: scenario.mode().name().to_owned(),
            steps: rows.len(),
            fallback_steps: rows
                .iter()
                .filter(|r| r.active_case == ActiveCase::Fallback)
                .count(),
            aborted,
            columns: columns(scenario.dim),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub meta: TraceMeta,
    /// Error that stopped the run early, if any.
    pub abort: Option<String>,
}

const VECTOR_FIELDS: [&str; 6] = ["p", "v", "x_vd", "u_ref", "u", "F"];
const SCALAR_FIELDS: [&str; 7] = [
    "h_min",
    "E",
    "epsilon",
    "ledger_margin",
    "beta_extra",
    "active_case",
    "feasible",
];

pub fn columns(dim: usize) -> Vec<String> {
    let axes = ["x", "y"];
    let mut cols = vec!["t".to_owned()];
    for f in VECTOR_FIELDS {
        for a in &axes[..dim] {
            cols.push(format!("{f}_{a}"));
        }
    }
    cols.extend(SCALAR_FIELDS.iter().map(|s| (*s).to_owned()));
    cols
}

fn fmt(x: f64) -> String {
    format!("{x:.8e}")
}

pub fn write_trace_csv<W: Write>(writer: W, rows: &[TraceRow], dim: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(columns(dim))?;
    for r in rows {
        let mut rec = Vec::with_capacity(1 + 6 * dim + SCALAR_FIELDS.len());
        rec.push(fmt(r.t));
        for v in [r.position, r.velocity, r.x_vd, r.u_ref, r.u, r.force] {
            v.ensure_dim(dim)?;
            rec.extend(v.as_slice().iter().map(|x| fmt(*x)));
        }
        rec.push(fmt(r.h_min));
        rec.push(fmt(r.energy));
        rec.push(fmt(r.epsilon));
        rec.push(fmt(r.ledger_margin));
        rec.push(fmt(r.beta_extra));
        rec.push(r.active_case.label().to_owned());
        rec.push(r.feasible.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(reader: R) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let dim = [1, 2]
        .into_iter()
        .find(|&d| columns(d) == header)
        .ok_or_else(|| Error::ShapeMismatch(format!("unrecognized trace header {}", header.join(","))))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|_| Error::ShapeMismatch(format!("bad number {:?} in trace", &rec[i])))
        };
        let vec_at = |k: usize| -> Result<Vector> {
            let start = 1 + k * dim;
            let vals: Vec<f64> = (start..start + dim).map(num).collect::<Result<_>>()?;
            Vector::from_slice(&vals)
        };
        let s = 1 + 6 * dim;
        let case = ActiveCase::from_label(&rec[s + 5])
            .ok_or_else(|| Error::ShapeMismatch(format!("unknown case {:?}", &rec[s + 5])))?;
        let feasible = rec[s + 6]
            .parse::<bool>()
            .map_err(|_| Error::ShapeMismatch(format!("bad flag {:?}", &rec[s + 6])))?;
        rows.push(TraceRow {
            t: num(0)?,
            position: vec_at(0)?,
            velocity: vec_at(1)?,
            x_vd: vec_at(2)?,
            u_ref: vec_at(3)?,
            u: vec_at(4)?,
            force: vec_at(5)?,
            h_min: num(s)?,
            energy: num(s + 1)?,
            epsilon: num(s + 2)?,
            ledger_margin: num(s + 3)?,
            beta_extra: num(s + 4)?,
            active_case: case,
            feasible,
        });
    }
    Ok(rows)
}

pub fn meta_path(trace_path: &Path) -> PathBuf {
    let mut s = trace_path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Writes the CSV and its metadata sidecar.
pub fn write_trace(path: &Path, trace: &Trace) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_trace_csv(file, &trace.rows, trace.meta.scenario.dim)?;
    let mut meta = serde_json::to_string_pretty(&trace.meta)?;
    meta.push('\n');
    std::fs::write(meta_path(path), meta)?;
    Ok(())
}
