//! Summaries of one trace and differences between two.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::trace::TraceRow;
use crate::scf::ActiveCase;

/// Fraction of the run that counts as its tail.
pub const TAIL_FRACTION: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceSummary {
    pub steps: usize,
    pub max_force: f64,
    /// ∫‖F‖ dt
    pub force_integral: f64,
    /// Mean of Fᵀx_v.
    pub mean_force_velocity: f64,
    /// Share of steps with nonzero force where Fᵀx_v < 0.
    pub frac_force_against_velocity: f64,
    /// Peak-to-peak force over the last quarter of the run.
    pub tail_envelope: f64,
    /// Mean ‖u − u_ref‖.
    pub mean_control_deviation: f64,
    pub min_h: f64,
    pub fallback_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareReport {
    pub a: TraceSummary,
    pub b: TraceSummary,
    pub max_position_deviation: f64,
    pub mean_position_deviation: f64,
    pub max_force_difference: f64,
}

fn dt_of(rows: &[TraceRow]) -> f64 {
    if rows.len() >= 2 {
        rows[1].t - rows[0].t
    } else {
        0.0
    }
}

/// Largest per-component peak-to-peak force over `rows`.
pub fn envelope(rows: &[TraceRow]) -> f64 {
    let Some(first) = rows.first() else {
        return 0.0;
    };
    (0..first.force.dim())
        .map(|i| {
            let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r.force[i]), hi.max(r.force[i]))
            });
            hi - lo
        })
        .fold(0.0, f64::max)
}

/// Envelope over consecutive windows of `window` seconds.
pub fn window_envelopes(rows: &[TraceRow], window: f64) -> Vec<f64> {
    let dt = dt_of(rows);
    if dt <= 0.0 {
        return vec![envelope(rows)];
    }
    let n = ((window / dt).round() as usize).max(1);
    rows.chunks(n).filter(|c| c.len() == n).map(envelope).collect()
}

pub fn tail(rows: &[TraceRow], fraction: f64) -> &[TraceRow] {
    let start = ((rows.len() as f64) * (1.0 - fraction)).floor() as usize;
    &rows[start.min(rows.len())..]
}

pub fn summarize(rows: &[TraceRow]) -> TraceSummary {
    let dt = dt_of(rows);
    let n = rows.len().max(1) as f64;
    let forcing: Vec<&TraceRow> = rows.iter().filter(|r| !r.force.is_zero()).collect();
    let against = forcing
        .iter()
        .filter(|r| r.force.dot(&r.velocity) < 0.0)
        .count();
    TraceSummary {
        steps: rows.len(),
        max_force: rows.iter().map(|r| r.force.norm()).fold(0.0, f64::max),
        force_integral: rows.iter().map(|r| r.force.norm() * dt).sum(),
        mean_force_velocity: rows.iter().map(|r| r.force.dot(&r.velocity)).sum::<f64>() / n,
        frac_force_against_velocity: if forcing.is_empty() {
            0.0
        } else {
            against as f64 / forcing.len() as f64
        },
        tail_envelope: envelope(tail(rows, TAIL_FRACTION)),
        mean_control_deviation: rows.iter().map(|r| (r.u - r.u_ref).norm()).sum::<f64>() / n,
        min_h: rows.iter().map(|r| r.h_min).fold(f64::INFINITY, f64::min),
        fallback_steps: rows
            .iter()
            .filter(|r| r.active_case == ActiveCase::Fallback)
            .count(),
    }
}

pub fn compare(a: &[TraceRow], b: &[TraceRow]) -> Result<CompareReport> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "traces have {} and {} rows",
            a.len(),
            b.len()
        )));
    }
    for (ra, rb) in a.iter().zip(b) {
        if ra.position.dim() != rb.position.dim() {
            return Err(Error::ShapeMismatch("traces differ in dimension".into()));
        }
        if (ra.t - rb.t).abs() > 1e-9 * (1.0 + ra.t.abs()) {
            return Err(Error::ShapeMismatch(format!(
                "time columns differ ({} vs {})",
                ra.t, rb.t
            )));
        }
    }
    let dev: Vec<f64> = a.iter().zip(b).map(|(x, y)| x.position.distance(&y.position)).collect();
    Ok(CompareReport {
        a: summarize(a),
        b: summarize(b),
        max_position_deviation: dev.iter().copied().fold(0.0, f64::max),
        mean_position_deviation: dev.iter().sum::<f64>() / dev.len().max(1) as f64,
        max_force_difference: a
            .iter()
            .zip(b)
            .map(|(x, y)| x.force.distance(&y.force))
            .fold(0.0, f64::max),
    })
}
