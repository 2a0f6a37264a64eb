//! Storage function, energy tank and the finite-L2-gain force constraint.
//!
//! The force F rendered to the operator and the operator's commanded velocity
//! x_vd are tied together by the differential constraint
//!
//! ```text
//! (k/2)‖F‖² + ε = (1/2k)‖x_vd‖² − V̇,      ε ≥ −E/Δt
//! ```
//!
//! where V = (k_v/2)‖x_v‖² and E is the tank level with Ė = ε. Integrating
//! it gives ∫‖F‖² ≤ (1/k²)∫‖x_vd‖² + (2/k)(V(0) + E(0)), which is what
//! [`L2Ledger`] audits at runtime.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, RobotState};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::optkernel::AffineRow;

/// Slack allowed by [`ledger_check`] for floating-point accumulation.
pub const LEDGER_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityParams {
    /// L2-gain knob; the certified gain is 1/k².
    pub k: f64,
    /// Storage-function weight.
    pub k_v: f64,
    /// Horizon Δt used in the tank-drain limit ε ≥ −E/Δt.
    pub dt_ref: f64,
    /// Tank capacity.
    pub e_max: f64,
}

impl Default for StabilityParams {
    fn default() -> Self {
        Self {
            k: 1.0,
            k_v: 1.0,
            dt_ref: 0.5,
            e_max: 0.2,
        }
    }
}

impl StabilityParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.k > 0.0
            && self.k_v > 0.0
            && self.dt_ref > 0.0
            && self.e_max >= 0.0
            && [self.k, self.k_v, self.dt_ref, self.e_max]
                .iter()
                .all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("stability parameters {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyTank {
    pub level: f64,
    /// Last applied Ė.
    pub flow: f64,
}

impl EnergyTank {
    pub fn new(level: f64, params: &StabilityParams) -> Result<Self> {
        if !(level >= 0.0 && level <= params.e_max) {
            return Err(Error::InvalidParameter(format!(
                "initial tank level {level} outside [0, {}]",
                params.e_max
            )));
        }
        Ok(Self { level, flow: 0.0 })
    }

    pub fn empty() -> Self {
        Self {
            level: 0.0,
            flow: 0.0,
        }
    }
}

/// V = (k_v/2)‖x_v‖².
pub fn storage(state: &RobotState, params: &StabilityParams) -> f64 {
    0.5 * params.k_v * state.velocity.norm_sq()
}

/// V̇ = k_v x_vᵀ u along the double integrator.
pub fn storage_rate(state: &RobotState, u: &ControlInput, params: &StabilityParams) -> f64 {
    params.k_v * state.velocity.dot(u.acceleration())
}

/// `(1/k²)(2kE/Δt + ‖x_vd‖²)`, the part of the force budget that does not
/// depend on u.
pub fn force_budget_constant(x_vd: &Vector, tank: &EnergyTank, params: &StabilityParams) -> f64 {
    let k = params.k;
    (2.0 * k * tank.level / params.dt_ref + x_vd.norm_sq()) / (k * k)
}

/// Right-hand side of ‖F‖² ≤ (1/k²)(2kE/Δt + ‖x_vd‖²) − (2k_v/k) x_vᵀu.
///
/// A negative value means no force is admissible for this u.
pub fn l2_force_bound(
    state: &RobotState,
    x_vd: &Vector,
    tank: &EnergyTank,
    u: &ControlInput,
    params: &StabilityParams,
) -> f64 {
    force_budget_constant(x_vd, tank, params)
        - 2.0 * params.k_v / params.k * state.velocity.dot(u.acceleration())
}

/// Row on u keeping the force bound nonnegative:
/// `−2k k_v x_vᵀu + 2kE/Δt + ‖x_vd‖² ≥ 0`.
pub fn l2_feasibility_row(
    state: &RobotState,
    x_vd: &Vector,
    tank: &EnergyTank,
    params: &StabilityParams,
) -> AffineRow {
    let k = params.k;
    AffineRow::new(
        state.velocity * (-2.0 * k * params.k_v),
        2.0 * k * tank.level / params.dt_ref + x_vd.norm_sq(),
    )
}

/// Tank flow ε implied by the L2 constraint at equality.
pub fn tank_flow(
    force: &Vector,
    x_vd: &Vector,
    state: &RobotState,
    u: &ControlInput,
    params: &StabilityParams,
) -> f64 {
    let k = params.k;
    x_vd.norm_sq() / (2.0 * k) - storage_rate(state, u, params) - 0.5 * k * force.norm_sq()
}

/// Advances the tank by one step and clamps the level to `[0, e_max]`.
pub fn tank_update(
    tank: &EnergyTank,
    force: &Vector,
    x_vd: &Vector,
    state: &RobotState,
    u: &ControlInput,
    dt: f64,
    params: &StabilityParams,
) -> EnergyTank {
    let flow = tank_flow(force, x_vd, state, u, params);
    EnergyTank {
        level: (tank.level + flow * dt).clamp(0.0, params.e_max),
        flow,
    }
}

/// Energy the step would need beyond what the tank holds. Nonzero only when
/// the force constraint was dropped (safety fallback); it equals the amount
/// created by clamping the tank at zero.
pub fn fallback_deficit(
    tank: &EnergyTank,
    force: &Vector,
    x_vd: &Vector,
    state: &RobotState,
    u: &ControlInput,
    dt: f64,
    params: &StabilityParams,
) -> f64 {
    let k = params.k;
    let need = 0.5 * k * force.norm_sq() * dt + storage_rate(state, u, params) * dt
        - x_vd.norm_sq() / (2.0 * k) * dt;
    (need - tank.level).max(0.0)
}

/// Running integrals for auditing the L2-gain bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct L2Ledger {
    /// ∫‖F‖² dτ
    pub int_force_sq: f64,
    /// ∫‖x_vd‖² dτ
    pub int_cmd_sq: f64,
    pub v0: f64,
    pub e0: f64,
    /// Slack injected by safety fallbacks, in the same units as `int_force_sq`.
    pub beta_extra: f64,
}

impl L2Ledger {
    pub fn new(v0: f64, e0: f64) -> Self {
        Self {
            int_force_sq: 0.0,
            int_cmd_sq: 0.0,
            v0,
            e0,
            beta_extra: 0.0,
        }
    }

    /// Left-endpoint rectangle rule.
    pub fn accumulate(&mut self, force: &Vector, x_vd: &Vector, dt: f64) {
        self.int_force_sq += force.norm_sq() * dt;
        self.int_cmd_sq += x_vd.norm_sq() * dt;
    }

    /// Books a tank deficit (energy units) as extra offset in the bound.
    pub fn add_deficit(&mut self, deficit: f64, params: &StabilityParams) {
        if deficit > 0.0 {
            self.beta_extra += 2.0 / params.k * deficit;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LedgerAudit {
    pub holds: bool,
    /// Bound minus ∫‖F‖²; negative when violated.
    pub margin: f64,
}

/// Checks ∫‖F‖² ≤ (1/k²)∫‖x_vd‖² + (2/k)V(0) + (2/k)E(0) + β_extra.
pub fn ledger_check(ledger: &L2Ledger, params: &StabilityParams) -> LedgerAudit {
    let k = params.k;
    let rhs = ledger.int_cmd_sq / (k * k)
        + 2.0 / k * ledger.v0
        + 2.0 / k * ledger.e0
        + ledger.beta_extra;
    let margin = rhs - ledger.int_force_sq;
    LedgerAudit {
        holds: ledger.int_force_sq <= rhs + LEDGER_TOL,
        margin,
    }
}

/// Output-strict passivity of the map x_vd → F with the same storage:
/// `k_v x_vᵀu + k‖F‖² ≤ x_vdᵀF`.
///
/// For fixed u the admissible forces form the ball centred at x_vd/(2k)
/// with squared radius ‖x_vd‖²/(4k²) − (k_v/k) x_vᵀu.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PassivityConstraint {
    pub k: f64,
    pub x_vd: Vector,
    /// k_v x_v, so the storage rate is `storage_coeff · u`.
    pub storage_coeff: Vector,
}

pub fn passivity_row(state: &RobotState, x_vd: &Vector, params: &StabilityParams) -> PassivityConstraint {
    PassivityConstraint {
        k: params.k,
        x_vd: *x_vd,
        storage_coeff: state.velocity * params.k_v,
    }
}

impl PassivityConstraint {
    /// `x_vdᵀF − k‖F‖² − k_v x_vᵀu`; the constraint holds when this is ≥ 0.
    pub fn slack(&self, u: &ControlInput, force: &Vector) -> f64 {
        self.x_vd.dot(force) - self.k * force.norm_sq() - self.storage_coeff.dot(u.acceleration())
    }

    pub fn holds(&self, u: &ControlInput, force: &Vector, tol: f64) -> bool {
        self.slack(u, force) >= -tol
    }

    pub fn center(&self) -> Vector {
        self.x_vd * (0.5 / self.k)
    }

    pub fn radius_sq(&self, u: &ControlInput) -> f64 {
        self.x_vd.norm_sq() / (4.0 * self.k * self.k) - self.storage_coeff.dot(u.acceleration()) / self.k
    }

    /// Row on u that keeps the admissible force set nonempty.
    pub fn feasibility_row(&self) -> AffineRow {
        AffineRow::new(-self.storage_coeff, self.x_vd.norm_sq() / (4.0 * self.k))
    }

    /// Closest admissible force to `target`, or `None` if the set is empty.
    pub fn project(&self, u: &ControlInput, target: &Vector) -> Option<Vector> {
        let r2 = self.radius_sq(u);
        let slop = 1e-9 * (1.0 + self.center().norm_sq() + (self.storage_coeff.dot(u.acceleration()) / self.k).abs());
        if r2 < -slop {
            return None;
        }
        let r2 = r2.max(0.0);
        let c = self.center();
        let offset = *target - c;
        let n2 = offset.norm_sq();
        if n2 <= r2 {
            return Some(*target);
        }
        Some(c + offset * (r2.sqrt() / n2.sqrt()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st1(v: f64) -> RobotState {
        RobotState::new(Vector::new1(0.0), Vector::new1(v)).unwrap()
    }

    fn unit_params() -> StabilityParams {
        StabilityParams {
            k: 1.0,
            k_v: 1.0,
            dt_ref: 1.0,
            e_max: 1.0,
        }
    }

    #[test]
    fn storage_examples() {
        let p = StabilityParams { k_v: 2.0, ..Default::default() };
        let s = RobotState::new(Vector::new2(0.0, 0.0), Vector::new2(3.0, 4.0)).unwrap();
        assert_eq!(storage(&s, &p), 25.0);
        assert_eq!(storage(&st1(0.0), &p), 0.0);
        let p5 = StabilityParams { k_v: 5.0, ..Default::default() };
        assert_eq!(storage(&st1(1.0), &p5), 2.5);
    }

    #[test]
    fn force_bound_examples() {
        let p = StabilityParams::default();
        let zero = Vector::new1(0.0);
        let u0 = ControlInput::zeros(1);
        assert_eq!(l2_force_bound(&st1(0.3), &zero, &EnergyTank::empty(), &u0, &p), 0.0);
        let p2 = StabilityParams { k: 2.0, ..p };
        let cmd = Vector::new1(0.8);
        assert!((l2_force_bound(&st1(0.3), &cmd, &EnergyTank::empty(), &u0, &p2) - 0.64 / 4.0).abs() < 1e-15);
        // 2·0.2 + 1 − 2·0.5
        let tank = EnergyTank { level: 0.2, flow: 0.0 };
        let b = l2_force_bound(&st1(1.0), &Vector::new1(1.0), &tank, &ControlInput(Vector::new1(0.5)), &unit_params());
        assert!((b - 0.4).abs() < 1e-15);
    }

    #[test]
    fn feasibility_row_examples() {
        let p = unit_params();
        let row = l2_feasibility_row(&st1(0.0), &Vector::new1(0.5), &EnergyTank::empty(), &p);
        assert_eq!(row.coeff, Vector::new1(0.0));
        assert!(row.constant >= 0.0);
        // u = 0 is always admissible
        for v in [-2.0, 0.0, 3.0] {
            let row = l2_feasibility_row(&st1(v), &Vector::new1(0.0), &EnergyTank::empty(), &p);
            assert!(row.value(&Vector::new1(0.0)) >= 0.0);
        }
        // x_v = 1, E = 0, x_vd = 0 → −2u ≥ 0
        let row = l2_feasibility_row(&st1(1.0), &Vector::new1(0.0), &EnergyTank::empty(), &p);
        assert_eq!(row.coeff, Vector::new1(-2.0));
        assert_eq!(row.constant, 0.0);
        assert!(row.value(&Vector::new1(-0.1)) > 0.0);
        assert!(row.value(&Vector::new1(0.1)) < 0.0);
    }

    #[test]
    fn tank_update_examples() {
        let p = StabilityParams { e_max: 0.2, k: 2.0, ..Default::default() };
        let zero = Vector::new1(0.0);
        let u0 = ControlInput::zeros(1);
        let tank = EnergyTank { level: 0.1, flow: 0.0 };
        assert_eq!(tank_update(&tank, &zero, &zero, &st1(0.5), &u0, 0.02, &p).level, 0.1);

        let cmd = Vector::new1(0.6);
        let next = tank_update(&tank, &zero, &cmd, &st1(0.5), &u0, 0.02, &p);
        let expected = 0.1 + 0.36 / (2.0 * 2.0) * 0.02;
        assert!((next.level - expected).abs() < 1e-15);

        let full = EnergyTank { level: 0.2, flow: 0.0 };
        assert_eq!(tank_update(&full, &zero, &cmd, &st1(0.0), &u0, 0.02, &p).level, 0.2);
    }

    #[test]
    fn ledger_examples() {
        let p = StabilityParams { k: 2.0, ..Default::default() };
        let ledger = L2Ledger::new(0.3, 0.0);
        let audit = ledger_check(&ledger, &p);
        assert!(audit.holds);
        assert!((audit.margin - 0.3).abs() < 1e-15);

        let mut ledger = L2Ledger::new(0.0, 0.0);
        ledger.accumulate(&Vector::new1(1.0), &Vector::new1(0.0), 0.1);
        assert!(!ledger_check(&ledger, &p).holds);
        ledger.add_deficit(0.1, &p);
        assert!(ledger_check(&ledger, &p).holds);
    }

    #[test]
    fn passivity_examples() {
        let p = unit_params();
        // x_vd = 0: admissible iff −k‖F‖² ≥ k_v x_vᵀu
        let c = passivity_row(&st1(1.0), &Vector::new1(0.0), &p);
        assert!(c.holds(&ControlInput(Vector::new1(-1.0)), &Vector::new1(0.5), 0.0));
        assert!(!c.holds(&ControlInput(Vector::new1(-0.1)), &Vector::new1(0.5), 0.0));
        // F = 0 is admissible exactly when x_vᵀu ≤ 0
        let c = passivity_row(&st1(1.0), &Vector::new1(0.3), &p);
        assert!(c.holds(&ControlInput(Vector::new1(-0.2)), &Vector::new1(0.0), 0.0));
        assert!(!c.holds(&ControlInput(Vector::new1(0.2)), &Vector::new1(0.0), 0.0));
        // robot at rest: F ∈ [0, x_vd/k], so a repulsive target projects to zero
        let c = passivity_row(&st1(0.0), &Vector::new1(0.4), &p);
        let f = c.project(&ControlInput::zeros(1), &Vector::new1(-0.8)).unwrap();
        assert!(f[0].abs() < 1e-15);
        let f = c.project(&ControlInput::zeros(1), &Vector::new1(0.1)).unwrap();
        assert_eq!(f[0], 0.1);
    }

    #[test]
    fn passivity_projection_matches_grid_search() {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let p = StabilityParams { k: 1.5, k_v: 2.0, ..Default::default() };
        let mut checked = 0;
        for _ in 0..200 {
            let state = RobotState::new(
                Vector::new2(0.0, 0.0),
                Vector::new2(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            )
            .unwrap();
            let cmd = Vector::new2(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
            let u = ControlInput(Vector::new2(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let target = Vector::new2(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let c = passivity_row(&state, &cmd, &p);
            let Some(f) = c.project(&u, &target) else { continue };
            assert!(c.holds(&u, &f, 1e-12));
            // grid oracle over a box that contains the admissible ball
            let step = 1e-3;
            let mut best = f64::INFINITY;
            let mut best_f = f;
            let (ctr, r) = (c.center(), c.radius_sq(&u).max(0.0).sqrt());
            let lo = |x: f64| ((x - r) / step).floor() as i64 - 1;
            let hi = |x: f64| ((x + r) / step).ceil() as i64 + 1;
            for i in lo(ctr[0])..=hi(ctr[0]) {
                for j in lo(ctr[1])..=hi(ctr[1]) {
                    let g = Vector::new2(i as f64 * step, j as f64 * step);
                    if c.slack(&u, &g) >= 0.0 {
                        let cost = (g - target).norm_sq();
                        if cost < best {
                            best = cost;
                            best_f = g;
                        }
                    }
                }
            }
            if best.is_finite() {
                // the optimal distance to the target agrees; the grid argmin
                // itself is poorly determined along the sphere
                let closed = (f - target).norm();
                assert!(closed <= best.sqrt() + 1e-12);
                assert!((best.sqrt() - closed).abs() <= 2e-3, "{best_f:?} vs {f:?}");
                checked += 1;
            }
            if checked >= 20 {
                break;
            }
        }
        assert!(checked >= 10);
    }
}
