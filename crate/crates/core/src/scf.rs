//! Sequential control-force synthesis.
//!
//! The safe input is computed first as the closest point to the reference
//! control that satisfies every CBF row and keeps the force budget
//! nonnegative. The force is then the discrepancy `u − u_ref`, clipped to the
//! L2 ball for that input.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::barriers::{CbfGains, CbfRow};
use crate::dynamics::{ControlInput, RobotState};
use crate::energy::{
    l2_feasibility_row, l2_force_bound, passivity_row, EnergyTank, StabilityParams,
};
use crate::error::{Error, Result};
use crate::jcf::JcfCase;
use crate::linalg::Vector;
use crate::optkernel::{project_to_ball, qp_closest};

/// Which branch produced a control decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActiveCase {
    Scf,
    Jcf(JcfCase),
    Fallback,
    PassivityBaseline,
    /// Ablation with the force constraint removed.
    NoL2,
    /// Trace marker for the step at which a run stopped on a hard error.
    Aborted,
}

impl ActiveCase {
    pub fn label(&self) -> &'static str {
        match self {
            ActiveCase::Scf => "SCF",
            ActiveCase::Jcf(c) => c.label(),
            ActiveCase::Fallback => "FALLBACK",
            ActiveCase::PassivityBaseline => "PASSIVITY",
            ActiveCase::NoL2 => "NO_L2",
            ActiveCase::Aborted => "ABORT",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Some(match s {
            "SCF" => ActiveCase::Scf,
            "FALLBACK" => ActiveCase::Fallback,
            "PASSIVITY" => ActiveCase::PassivityBaseline,
            "NO_L2" => ActiveCase::NoL2,
            "ABORT" => ActiveCase::Aborted,
            other => ActiveCase::Jcf(JcfCase::from_label(other)?),
        })
    }
}

impl fmt::Display for ActiveCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlDecision {
    pub u: ControlInput,
    /// Force rendered to the operator, F = u − u_ref before clipping.
    pub force: Vector,
    pub u_ref: ControlInput,
    pub active_case: ActiveCase,
    /// False when the force constraint had to be dropped.
    pub feasible: bool,
    pub cost: f64,
}

impl ControlDecision {
    pub fn is_fallback(&self) -> bool {
        self.active_case == ActiveCase::Fallback
    }
}

/// Parameters shared by every controller.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub stability: StabilityParams,
    pub gains: CbfGains,
    /// Horizon of the proportional reference controller.
    pub dt_ref_controller: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            stability: StabilityParams::default(),
            gains: CbfGains::default(),
            dt_ref_controller: 0.5,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        self.stability.validate()?;
        self.gains.validate()?;
        if !(self.dt_ref_controller > 0.0 && self.dt_ref_controller.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "dt_ref_controller must be positive, got {}",
                self.dt_ref_controller
            )));
        }
        Ok(())
    }
}

/// u_ref = (x_vd − x_v)/Δt.
pub fn reference_control(state: &RobotState, x_vd: &Vector, dt_ref: f64) -> Result<ControlInput> {
    if !(dt_ref > 0.0 && dt_ref.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt_ref must be positive, got {dt_ref}")));
    }
    x_vd.ensure_dim(state.dim())?;
    x_vd.ensure_finite("commanded velocity")?;
    Ok(ControlInput((*x_vd - state.velocity) * (1.0 / dt_ref)))
}

/// Safety-only input with zero force. Used when the force constraint cannot
/// be met together with the barrier rows.
pub fn fallback(u_ref: &ControlInput, barriers: &[CbfRow]) -> Result<ControlDecision> {
    let sol = qp_closest(u_ref.acceleration(), barriers)?.ok_or(Error::CbfInfeasible)?;
    let u = ControlInput(sol.point);
    Ok(ControlDecision {
        u,
        force: Vector::zeros(u.0.dim()),
        u_ref: *u_ref,
        active_case: ActiveCase::Fallback,
        feasible: false,
        cost: (sol.point - u_ref.0).norm_sq(),
    })
}

fn safe_input(
    u_ref: &ControlInput,
    barriers: &[CbfRow],
    extra: crate::optkernel::AffineRow,
) -> Result<Option<ControlInput>> {
    let mut rows = Vec::with_capacity(barriers.len() + 1);
    rows.extend_from_slice(barriers);
    rows.push(extra);
    Ok(qp_closest(u_ref.acceleration(), &rows)?.map(|s| ControlInput(s.point)))
}

fn check_inputs(state: &RobotState, x_vd: &Vector, tank: &EnergyTank, cfg: &ControllerConfig) -> Result<()> {
    x_vd.ensure_dim(state.dim())?;
    if !(tank.level >= 0.0 && tank.level.is_finite()) {
        return Err(Error::InvalidParameter(format!("tank level {}", tank.level)));
    }
    cfg.validate()
}

pub fn scf_step(
    state: &RobotState,
    x_vd: &Vector,
    barriers: &[CbfRow],
    tank: &EnergyTank,
    cfg: &ControllerConfig,
) -> Result<ControlDecision> {
    check_inputs(state, x_vd, tank, cfg)?;
    let params = &cfg.stability;
    let u_ref = reference_control(state, x_vd, cfg.dt_ref_controller)?;
    let feas = l2_feasibility_row(state, x_vd, tank, params);
    let Some(u) = safe_input(&u_ref, barriers, feas)? else {
        return fallback(&u_ref, barriers);
    };
    let f_ref = u.0 - u_ref.0;
    let force = project_to_ball(&f_ref, l2_force_bound(state, x_vd, tank, &u, params));
    Ok(ControlDecision {
        u,
        force,
        u_ref,
        active_case: ActiveCase::Scf,
        feasible: true,
        cost: f_ref.norm_sq() + (force - f_ref).norm_sq(),
    })
}

/// Same pipeline with the output-passivity constraint in place of the L2
/// force bound.
pub fn scf_passivity_step(
    state: &RobotState,
    x_vd: &Vector,
    barriers: &[CbfRow],
    tank: &EnergyTank,
    cfg: &ControllerConfig,
) -> Result<ControlDecision> {
    check_inputs(state, x_vd, tank, cfg)?;
    let u_ref = reference_control(state, x_vd, cfg.dt_ref_controller)?;
    let pass = passivity_row(state, x_vd, &cfg.stability);
    let Some(u) = safe_input(&u_ref, barriers, pass.feasibility_row())? else {
        return fallback(&u_ref, barriers);
    };
    let f_ref = u.0 - u_ref.0;
    let Some(force) = pass.project(&u, &f_ref) else {
        return fallback(&u_ref, barriers);
    };
    Ok(ControlDecision {
        u,
        force,
        u_ref,
        active_case: ActiveCase::PassivityBaseline,
        feasible: true,
        cost: f_ref.norm_sq() + (force - f_ref).norm_sq(),
    })
}

/// Ablation: CBF filtering only, the raw discrepancy is rendered.
pub fn scf_without_l2_step(
    state: &RobotState,
    x_vd: &Vector,
    barriers: &[CbfRow],
    tank: &EnergyTank,
    cfg: &ControllerConfig,
) -> Result<ControlDecision> {
    check_inputs(state, x_vd, tank, cfg)?;
    let u_ref = reference_control(state, x_vd, cfg.dt_ref_controller)?;
    let sol = qp_closest(u_ref.acceleration(), barriers)?.ok_or(Error::CbfInfeasible)?;
    let u = ControlInput(sol.point);
    let force = u.0 - u_ref.0;
    Ok(ControlDecision {
        u,
        force,
        u_ref,
        active_case: ActiveCase::NoL2,
        feasible: true,
        cost: force.norm_sq(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barriers::{cbf_rows, BarrierShape};
    use crate::optkernel::AffineRow;
    use proptest::prelude::*;

    fn st1(p: f64, v: f64) -> RobotState {
        RobotState::new(Vector::new1(p), Vector::new1(v)).unwrap()
    }

    fn wall() -> Vec<BarrierShape> {
        vec![BarrierShape::HalfPlane {
            normal: Vector::new1(1.0),
            offset: 6.0,
        }]
    }

    #[test]
    fn reference_control_examples() {
        let s = st1(0.0, 0.0);
        assert_eq!(reference_control(&s, &Vector::new1(0.0), 0.5).unwrap().0[0], 0.0);
        assert_eq!(reference_control(&s, &Vector::new1(1.0), 0.5).unwrap().0[0], 2.0);
        let s = st1(3.0, 0.4);
        assert_eq!(reference_control(&s, &Vector::new1(0.4), 0.5).unwrap().0[0], 0.0);
        assert!(reference_control(&s, &Vector::new1(0.4), 0.0).is_err());
    }

    #[test]
    fn free_space_tracking_is_untouched() {
        let s = st1(0.0, 0.3);
        let d = scf_step(&s, &Vector::new1(0.3), &[], &EnergyTank::empty(), &ControllerConfig::default()).unwrap();
        assert_eq!(d.u.0[0], 0.0);
        assert_eq!(d.force[0], 0.0);
        assert_eq!(d.active_case, ActiveCase::Scf);
    }

    #[test]
    fn wall_contact_clamps_input_and_pushes_back() {
        let cfg = ControllerConfig::default();
        let s = st1(5.9, 0.3);
        let x_vd = Vector::new1(0.6);
        let (rows, _) = cbf_rows(&wall(), &s, &cfg.gains).unwrap();
        let d = scf_step(&s, &x_vd, &rows, &EnergyTank::empty(), &cfg).unwrap();
        assert!(rows[0].is_satisfied(&d.u.0, 1e-9));
        assert!(d.u.0[0] < d.u_ref.0[0]);
        assert!(d.force[0] <= 0.0);
        let bound = l2_force_bound(&s, &x_vd, &EnergyTank::empty(), &d.u, &cfg.stability);
        assert!(d.force.norm_sq() <= bound + 1e-7);
    }

    #[test]
    fn full_tank_gives_larger_force_at_wall() {
        let s = st1(5.9, 0.3);
        let x_vd = Vector::new1(0.6);
        let cfg = ControllerConfig::default();
        let (rows, _) = cbf_rows(&wall(), &s, &cfg.gains).unwrap();
        let empty = scf_step(&s, &x_vd, &rows, &EnergyTank::empty(), &cfg).unwrap();
        let full = EnergyTank::new(0.2, &cfg.stability).unwrap();
        let full = scf_step(&s, &x_vd, &rows, &full, &cfg).unwrap();
        assert!(full.force.norm() > empty.force.norm());
    }

    #[test]
    fn conflicting_rows_fall_back_with_zero_force() {
        // Moving fast toward the wall: the barrier demands braking, which the
        // force budget (negative storage rate allowed only up to the tank)
        // cannot pay for when the command is zero.
        let cfg = ControllerConfig::default();
        let s = st1(5.5, 1.0);
        let x_vd = Vector::new1(0.0);
        let (rows, _) = cbf_rows(&wall(), &s, &cfg.gains).unwrap();
        let d = scf_step(&s, &x_vd, &rows, &EnergyTank::empty(), &cfg).unwrap();
        // Braking is −x_vᵀu > 0, so the feasibility row is slack here and no fallback occurs.
        assert_eq!(d.active_case, ActiveCase::Scf);

        // Accelerating is what the budget forbids: a barrier that requires pushing forward.
        let behind = vec![AffineRow::new(Vector::new1(1.0), -3.0)];
        let d = scf_step(&s, &x_vd, &behind, &EnergyTank::empty(), &cfg).unwrap();
        assert!(d.is_fallback());
        assert_eq!(d.force, Vector::new1(0.0));
        assert!(!d.feasible);
        assert!((d.u.0[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn cornered_is_a_hard_error() {
        let rows = vec![
            AffineRow::new(Vector::new1(1.0), -1.0),
            AffineRow::new(Vector::new1(-1.0), -1.0),
        ];
        let s = st1(0.0, 0.0);
        let err = scf_step(&s, &Vector::new1(0.0), &rows, &EnergyTank::empty(), &ControllerConfig::default());
        assert!(matches!(err, Err(Error::CbfInfeasible)));
    }

    #[test]
    fn passivity_zero_command_admits_reference_force() {
        // x_vd = 0: the ball has centre 0 and radius² = −(k_v/k)x_vᵀu.
        let cfg = ControllerConfig::default();
        let s = st1(0.0, 0.5);
        let d = scf_passivity_step(&s, &Vector::new1(0.0), &[], &EnergyTank::empty(), &cfg).unwrap();
        // u_ref = −1 is braking, the feasibility row is slack, F_ref = 0.
        assert_eq!(d.force[0], 0.0);
        assert_eq!(d.u.0[0], -1.0);
        assert_eq!(d.active_case, ActiveCase::PassivityBaseline);
    }

    #[test]
    fn ablation_renders_raw_discrepancy() {
        let cfg = ControllerConfig::default();
        let s = st1(5.9, 0.3);
        let (rows, _) = cbf_rows(&wall(), &s, &cfg.gains).unwrap();
        let d = scf_without_l2_step(&s, &Vector::new1(0.6), &rows, &EnergyTank::empty(), &cfg).unwrap();
        assert_eq!(d.force, d.u.0 - d.u_ref.0);
        assert_eq!(d.active_case, ActiveCase::NoL2);
    }

    #[test]
    fn case_labels_round_trip() {
        for c in [
            ActiveCase::Scf,
            ActiveCase::Fallback,
            ActiveCase::PassivityBaseline,
            ActiveCase::NoL2,
            ActiveCase::Aborted,
            ActiveCase::Jcf(JcfCase::C3),
        ] {
            assert_eq!(ActiveCase::from_label(c.label()), Some(c));
        }
    }

    proptest! {
        #[test]
        fn scf_output_invariants(
            px in -2.0..2.0f64, py in -2.0..2.0f64,
            vx in -1.5..1.5f64, vy in -1.5..1.5f64,
            cx in -2.0..2.0f64, cy in -2.0..2.0f64,
            level in 0.0..0.2f64, k_v in 0.5..5.0f64,
        ) {
            let shapes = vec![BarrierShape::Disc { center: Vector::new2(3.0, 0.5), radius: 1.0, robot_radius: 0.0 }];
            let s = RobotState::new(Vector::new2(px, py), Vector::new2(vx, vy)).unwrap();
            let mut cfg = ControllerConfig::default();
            cfg.stability.k_v = k_v;
            let tank = EnergyTank::new(level, &cfg.stability).unwrap();
            let x_vd = Vector::new2(cx, cy);
            let (rows, _) = cbf_rows(&shapes, &s, &cfg.gains).unwrap();
            let d = scf_step(&s, &x_vd, &rows, &tank, &cfg).unwrap();
            for r in &rows {
                prop_assert!(r.value(&d.u.0) >= -1e-7 * r.scale(&d.u.0));
            }
            if d.is_fallback() {
                prop_assert!(d.force.is_zero());
            } else {
                let bound = l2_force_bound(&s, &x_vd, &tank, &d.u, &cfg.stability);
                prop_assert!(d.force.norm_sq() <= bound.max(0.0) + 1e-7);
                // Local optimality probe over feasible directions.
                let feas = l2_feasibility_row(&s, &x_vd, &tank, &cfg.stability);
                let base = (d.u.0 - d.u_ref.0).norm_sq();
                for i in 0..16 {
                    let a = i as f64 * std::f64::consts::PI / 8.0;
                    let cand = d.u.0 + Vector::new2(a.cos(), a.sin()) * 1e-4;
                    let ok = rows.iter().chain(std::iter::once(&feas)).all(|r| r.value(&cand) >= 0.0);
                    if ok {
                        prop_assert!((cand - d.u_ref.0).norm_sq() >= base - 1e-9);
                    }
                }
            }
        }
    }
}
