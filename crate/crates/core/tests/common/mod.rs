#![allow(dead_code)]

use std::path::PathBuf;

use hsa_core::harness::{ControllerMode, Scenario, TraceRow};

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn scenario(name: &str) -> Scenario {
    let path = scenario_dir().join(format!("{name}.toml"));
    Scenario::from_path(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn variant(name: &str, mode: ControllerMode, k_v: f64, e_max: f64) -> Scenario {
    let mut sc = scenario(name);
    sc.set_mode(mode);
    sc.stability.k_v = k_v;
    sc.stability.e_max = e_max;
    sc.tank_initial = sc.tank_initial.min(e_max);
    sc
}

/// (k_v/k)·Σ‖u‖²dt²: what the left-endpoint storage rate misses per run
/// under semi-implicit stepping.
pub fn stepping_slack(rows: &[TraceRow], sc: &Scenario) -> f64 {
    let dt = sc.dt;
    sc.stability.k_v / sc.stability.k * rows.iter().map(|r| r.u.norm_sq() * dt * dt).sum::<f64>()
}
