//! Joint control-force synthesis.
//!
//! Solves
//!
//! ```text
//! min  w_cbf‖u − u_ref‖² + w_l2‖F − (u − u_ref)‖²
//! s.t. CBF rows on u,   ‖F‖² ≤ C₁ − C₂ᵀu
//! ```
//!
//! with C₁ = (1/k²)(2kE/Δt + ‖x_vd‖²) and C₂ = (2k_v/k)x_v, by enumerating
//! which constraints are active and solving each case in closed form:
//!
//! - C1: nothing active, u = u_ref and F = 0.
//! - C2: only CBF rows active, F = u − u_ref.
//! - C3: only the quadratic active, a cubic in its multiplier λ.
//! - C4: the quadratic and one row, a quintic in λ.
//! - C5: the quadratic and two rows (d = 2), u fixed at the vertex.
//!
//! The problem is convex, so the optimum is among the feasible stationary
//! points found this way and the cheapest one wins.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::barriers::CbfRow;
use crate::dynamics::{ControlInput, RobotState};
use crate::energy::{force_budget_constant, EnergyTank};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::optkernel::{
    orth_complement, poly_add, poly_mul, poly_scale, project_to_ball, qp_closest, real_roots,
    AffineRow,
};
use crate::scf::{fallback, reference_control, ActiveCase, ControlDecision, ControllerConfig};

/// Acceptance tolerance for candidates (scaled by the size of the terms).
pub const CANDIDATE_TOL: f64 = 1e-7;
/// Costs closer than this are treated as tied; the lower case wins.
pub const COST_TIE_TOL: f64 = 1e-10;
/// Roots this close to a pole of the recovery formulas take the special branch.
const POLE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JcfWeights {
    pub w_cbf: f64,
    pub w_l2: f64,
}

impl Default for JcfWeights {
    fn default() -> Self {
        Self {
            w_cbf: 1.0,
            w_l2: 1.0,
        }
    }
}

impl JcfWeights {
    pub fn validate(&self) -> Result<()> {
        if self.w_cbf > 0.0 && self.w_l2 > 0.0 && self.w_cbf.is_finite() && self.w_l2.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("weights must be positive, got {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum JcfCase {
    C1,
    C2,
    C3,
    C4,
    C5,
}

impl JcfCase {
    pub fn label(&self) -> &'static str {
        match self {
            JcfCase::C1 => "C1",
            JcfCase::C2 => "C2",
            JcfCase::C3 => "C3",
            JcfCase::C4 => "C4",
            JcfCase::C5 => "C5",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Some(match s {
            "C1" => JcfCase::C1,
            "C2" => JcfCase::C2,
            "C3" => JcfCase::C3,
            "C4" => JcfCase::C4,
            "C5" => JcfCase::C5,
            _ => return None,
        })
    }
}

impl fmt::Display for JcfCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JcfCandidate {
    pub u: Vector,
    pub force: Vector,
    pub case_id: JcfCase,
    /// Multiplier of the quadratic constraint (0 when it is inactive).
    pub lambda: f64,
    pub cost: f64,
    pub kkt_residual: f64,
}

/// One instance of the joint problem.
#[derive(Clone, Debug, PartialEq)]
pub struct JcfProblem {
    pub u_ref: Vector,
    pub rows: Vec<AffineRow>,
    pub c1: f64,
    pub c2: Vector,
    pub weights: JcfWeights,
}

impl JcfProblem {
    pub fn new(
        state: &RobotState,
        x_vd: &Vector,
        barriers: &[CbfRow],
        tank: &EnergyTank,
        cfg: &ControllerConfig,
        weights: JcfWeights,
    ) -> Result<Self> {
        cfg.validate()?;
        weights.validate()?;
        let u_ref = reference_control(state, x_vd, cfg.dt_ref_controller)?;
        let p = &cfg.stability;
        Ok(Self {
            u_ref: u_ref.0,
            rows: barriers.to_vec(),
            c1: force_budget_constant(x_vd, tank, p),
            c2: state.velocity * (2.0 * p.k_v / p.k),
            weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.u_ref.dim()
    }

    pub fn cost(&self, u: &Vector, force: &Vector) -> f64 {
        let delta = *u - self.u_ref;
        self.weights.w_cbf * delta.norm_sq() + self.weights.w_l2 * (*force - delta).norm_sq()
    }

    /// `C₁ − C₂ᵀu − ‖F‖²`, nonnegative when the force bound holds.
    pub fn quad_slack(&self, u: &Vector, force: &Vector) -> f64 {
        self.c1 - self.c2.dot(u) - force.norm_sq()
    }

    fn quad_scale(&self, u: &Vector, force: &Vector) -> f64 {
        1.0 + self.c1.abs() + self.c2.norm() * u.norm() + force.norm_sq()
    }

    pub fn is_feasible(&self, u: &Vector, force: &Vector, tol: f64) -> bool {
        u.is_finite()
            && force.is_finite()
            && self.rows.iter().all(|r| r.is_satisfied(u, tol))
            && self.quad_slack(u, force) >= -tol * self.quad_scale(u, force)
    }

    /// Norm of the Lagrangian gradient at `(u, F)` with multiplier `lambda`
    /// on the quadratic, after the best fit of multipliers on `active` rows.
    pub fn kkt_residual(&self, u: &Vector, force: &Vector, lambda: f64, active: &[usize]) -> f64 {
        let (a, b) = (self.weights.w_cbf, self.weights.w_l2);
        let delta = *u - self.u_ref;
        let r_u = delta * (2.0 * a) - (*force - delta) * (2.0 * b) + self.c2 * lambda;
        let r_f = (*force - delta) * (2.0 * b) + *force * (2.0 * lambda);
        let grads: Vec<Vector> = active.iter().map(|&i| self.rows[i].coeff).collect();
        let r_u = remove_span(&r_u, &grads);
        (r_u.norm_sq() + r_f.norm_sq()).sqrt()
    }

    fn candidate(&self, u: Vector, force: Vector, case_id: JcfCase, lambda: f64, active: &[usize]) -> JcfCandidate {
        JcfCandidate {
            u,
            force,
            case_id,
            lambda,
            cost: self.cost(&u, &force),
            kkt_residual: self.kkt_residual(&u, &force, lambda, active),
        }
    }
}

/// Component of `r` orthogonal to the span of `grads` (least squares).
fn remove_span(r: &Vector, grads: &[Vector]) -> Vector {
    match grads {
        [] => *r,
        [g] => {
            let n2 = g.norm_sq();
            if n2 == 0.0 {
                *r
            } else {
                *r - *g * (r.dot(g) / n2)
            }
        }
        [g, h, ..] => {
            let (gg, gh, hh) = (g.norm_sq(), g.dot(h), h.norm_sq());
            let det = gg * hh - gh * gh;
            if det.abs() <= 1e-12 * gg * hh {
                return remove_span(r, &[*g]);
            }
            let (rg, rh) = (r.dot(g), r.dot(h));
            let mu_g = (rg * hh - rh * gh) / det;
            let mu_h = (gg * rh - gh * rg) / det;
            *r - *g * mu_g - *h * mu_h
        }
    }
}

/// Cubic in λ for the quadratic-only case with unit weights,
/// highest degree first.
pub fn jcf_cubic_coeffs(c1: f64, c2: &Vector, u_ref: &Vector) -> [f64; 4] {
    let c = c2.norm_sq();
    let a = c1 - c2.dot(u_ref);
    [4.0 * c, 5.0 * c + 16.0 * a, 2.0 * c + 16.0 * a, 4.0 * a]
}

/// Quintic in λ for the quadratic-plus-one-row case with unit weights.
///
/// `c2` is the component of C₂ along the row's tangent direction,
/// `c3 = (u_∥ − u''_ref)²` and `c4 = C₂ᵀĝ u_∥ − C₁ + c2·u'_ref` where ĝ is
/// the unit row normal and u_∥ the normal coordinate fixed by the row.
pub fn jcf_quintic_coeffs(c2: f64, c3: f64, c4: f64) -> [f64; 6] {
    let c = c2 * c2;
    [
        4.0 * c,
        13.0 * c - 16.0 * c4,
        16.0 * c - 48.0 * c4,
        9.0 * c - 16.0 * c3 - 52.0 * c4,
        2.0 * c - 16.0 * c3 - 24.0 * c4,
        -4.0 * c3 - 4.0 * c4,
    ]
}

/// Cubic for general weights (a = w_cbf, b = w_l2); `c = ‖C₂‖²`,
/// `a_const = C₁ − C₂ᵀu_ref`. Equals [`jcf_cubic_coeffs`] at a = b = 1.
pub fn weighted_cubic_coeffs(w: &JcfWeights, c: f64, a_const: f64) -> [f64; 4] {
    let (a, b) = (w.w_cbf, w.w_l2);
    let s = a + b;
    [
        2.0 * s * c,
        (4.0 * a * b + b * b) * c + 4.0 * s * s * a_const,
        2.0 * a * b * b * c + 8.0 * a * b * s * a_const,
        4.0 * a * a * b * b * a_const,
    ]
}

/// Quintic for general weights. At a = b = 1 it is the negative of
/// [`jcf_quintic_coeffs`], so both have the same roots.
///
/// Built from
/// `λ²b²c(b+λ)² + b²c3·D² + c4·D²(b+λ)² − λ(b+λ)³c·D` with
/// `D = 2ab + 2(a+b)λ` and `c = c2²`.
pub fn weighted_quintic_coeffs(w: &JcfWeights, c2: f64, c3: f64, c4: f64) -> Vec<f64> {
    let (a, b) = (w.w_cbf, w.w_l2);
    let c = c2 * c2;
    let bl = [1.0, b]; // b + λ
    let d = [2.0 * (a + b), 2.0 * a * b];
    let lam = [1.0, 0.0];
    let bl2 = poly_mul(&bl, &bl);
    let bl3 = poly_mul(&bl2, &bl);
    let d2 = poly_mul(&d, &d);

    let t1 = poly_scale(&poly_mul(&poly_mul(&lam, &lam), &bl2), b * b * c);
    let t2 = poly_scale(&d2, b * b * c3);
    let t3 = poly_scale(&poly_mul(&d2, &bl2), c4);
    let t4 = poly_scale(&poly_mul(&poly_mul(&lam, &bl3), &d), -c);
    let sum = poly_add(&poly_add(&t1, &t2), &poly_add(&t3, &t4));
    // pad to six coefficients
    let mut out = vec![0.0; 6usize.saturating_sub(sum.len())];
    out.extend(sum);
    out
}

fn near(x: f64, target: f64) -> bool {
    (x - target).abs() <= POLE_TOL * (1.0 + target.abs())
}

/// Roots of `coeffs`, or none for the identically zero polynomial.
fn roots_or_empty(coeffs: &[f64]) -> Result<Vec<f64>> {
    match real_roots(coeffs) {
        Ok(r) => Ok(r.roots),
        Err(Error::ZeroPolynomial) => Ok(Vec::new()),
        Err(e) => Err(e),
    }
}

/// Every feasible stationary point of the joint problem, in case order.
pub fn jcf_candidates(problem: &JcfProblem) -> Result<Vec<JcfCandidate>> {
    let d = problem.dim();
    problem.u_ref.ensure_finite("reference control")?;
    problem.c2.ensure_dim(d)?;
    for r in &problem.rows {
        r.coeff.ensure_dim(d)?;
    }
    let w = problem.weights;
    let (a, b) = (w.w_cbf, w.w_l2);
    let u_ref = problem.u_ref;
    let zero = Vector::zeros(d);
    let mut raw: Vec<(JcfCandidate, Vec<usize>)> = Vec::new();
    let mut push = |u: Vector, f: Vector, case: JcfCase, lambda: f64, active: Vec<usize>| {
        raw.push((problem.candidate(u, f, case, lambda, &active), active));
    };

    // C1
    push(u_ref, zero, JcfCase::C1, 0.0, Vec::new());

    // C2: the unique minimizer when the quadratic is ignored.
    if let Some(sol) = qp_closest(&u_ref, &problem.rows)? {
        if !sol.active_rows().is_empty() {
            let delta = sol.point - u_ref;
            push(sol.point, delta, JcfCase::C2, 0.0, sol.active_rows().to_vec());
        }
    }

    // C3
    let c = problem.c2.norm_sq();
    let a_const = problem.c1 - problem.c2.dot(&u_ref);
    if c <= 1e-24 {
        // C₂ = 0: the bound does not involve u and F = 0 is optimal.
        push(u_ref, zero, JcfCase::C3, 0.0, Vec::new());
    } else {
        let pole = -a * b / (a + b);
        for lambda in roots_or_empty(&weighted_cubic_coeffs(&w, c, a_const))? {
            if near(lambda, pole) {
                continue;
            }
            let dd = 2.0 * a * b + 2.0 * (a + b) * lambda;
            let f = problem.c2 * (-lambda * b / dd);
            let delta = problem.c2 * (-lambda * (b + lambda) / dd);
            push(u_ref + delta, f, JcfCase::C3, lambda, Vec::new());
        }
    }

    // C4
    for (i, row) in problem.rows.iter().enumerate() {
        let Ok(oc) = orth_complement(&row.coeff) else {
            continue;
        };
        let g = oc.parallel_unit;
        let u_par = -row.constant / row.coeff.norm();
        let e = u_par - g.dot(&u_ref);
        let p = problem.c2.dot(&g) * u_par;
        let (t, c2t, ut_ref) = match oc.basis {
            Some(t) => (Some(t), problem.c2.dot(&t), t.dot(&u_ref)),
            None => (None, 0.0, 0.0),
        };
        // Force budget left once the normal coordinate is fixed and u' = u'_ref.
        let a_red = problem.c1 - c2t * ut_ref - p;
        let assemble = |up: f64, fp: f64, fpar: f64| -> (Vector, Vector) {
            match t {
                Some(t) => (t * up + g * u_par, t * fp + g * fpar),
                None => (g * u_par, g * fpar),
            }
        };
        let lambda_from = |fpar: f64| if fpar != 0.0 { b * e / fpar - b } else { 0.0 };

        if c2t * c2t <= 1e-24 {
            // Tangential block decouples: F' = 0, u' = u'_ref.
            if a_red >= 0.0 {
                let r = a_red.sqrt();
                for fpar in [r, -r] {
                    let (u, f) = assemble(ut_ref, 0.0, fpar);
                    push(u, f, JcfCase::C4, lambda_from(fpar), vec![i]);
                }
            }
            continue;
        }

        let pole_d = -a * b / (a + b);
        let c4 = -a_red;
        for lambda in roots_or_empty(&weighted_quintic_coeffs(&w, c2t, e * e, c4))? {
            if near(lambda, pole_d) || near(lambda, -b) {
                continue;
            }
            let dd = 2.0 * a * b + 2.0 * (a + b) * lambda;
            let fp = -lambda * b * c2t / dd;
            let dp = -lambda * (b + lambda) * c2t / dd;
            let fpar = b * e / (b + lambda);
            let (u, f) = assemble(ut_ref + dp, fp, fpar);
            push(u, f, JcfCase::C4, lambda, vec![i]);
        }
        // λ = −b admits solutions only when the row leaves the normal
        // coordinate where the reference puts it.
        if e.abs() <= POLE_TOL * (1.0 + u_par.abs()) {
            let fp = -0.5 * c2t;
            let rest = a_red - fp * fp;
            if rest >= 0.0 {
                let r = rest.sqrt();
                for fpar in [r, -r] {
                    let (u, f) = assemble(ut_ref, fp, fpar);
                    push(u, f, JcfCase::C4, -b, vec![i]);
                }
            }
        }
    }

    // C5
    if d == 2 {
        for i in 0..problem.rows.len() {
            for j in (i + 1)..problem.rows.len() {
                let pair = [problem.rows[i], problem.rows[j]];
                let Some(vertex) = vertex_of(&pair[0], &pair[1]) else {
                    continue;
                };
                let delta = vertex - u_ref;
                let r2 = problem.c1 - problem.c2.dot(&vertex);
                if r2 < 0.0 {
                    continue;
                }
                let f = project_to_ball(&delta, r2);
                let lambda = if f.norm_sq() > 0.0 {
                    b * (delta - f).dot(&f) / f.norm_sq()
                } else {
                    0.0
                };
                push(vertex, f, JcfCase::C5, lambda, vec![i, j]);
            }
        }
    }

    Ok(raw
        .into_iter()
        .filter(|(c, _)| problem.is_feasible(&c.u, &c.force, CANDIDATE_TOL))
        .map(|(c, _)| c)
        .collect())
}

fn vertex_of(r: &AffineRow, s: &AffineRow) -> Option<Vector> {
    let det = r.coeff[0] * s.coeff[1] - r.coeff[1] * s.coeff[0];
    if det.abs() <= 1e-12 * r.coeff.norm() * s.coeff.norm() || det == 0.0 {
        return None;
    }
    let (ra, rb) = (-r.constant, -s.constant);
    Some(Vector::new2(
        (ra * s.coeff[1] - r.coeff[1] * rb) / det,
        (r.coeff[0] * rb - ra * s.coeff[0]) / det,
    ))
}

/// Cheapest feasible candidate, or `None` when the force constraint cannot be
/// met together with the rows.
pub fn jcf_solve(problem: &JcfProblem) -> Result<Option<JcfCandidate>> {
    let mut best: Option<JcfCandidate> = None;
    for cand in jcf_candidates(problem)? {
        match &best {
            Some(b) if cand.cost >= b.cost - COST_TIE_TOL => {}
            _ => best = Some(cand),
        }
    }
    Ok(best)
}

pub fn jcf_step(
    state: &RobotState,
    x_vd: &Vector,
    barriers: &[CbfRow],
    tank: &EnergyTank,
    cfg: &ControllerConfig,
    weights: &JcfWeights,
) -> Result<ControlDecision> {
    x_vd.ensure_dim(state.dim())?;
    let problem = JcfProblem::new(state, x_vd, barriers, tank, cfg, *weights)?;
    let u_ref = ControlInput(problem.u_ref);
    match jcf_solve(&problem)? {
        Some(best) => Ok(ControlDecision {
            u: ControlInput(best.u),
            force: best.force,
            u_ref,
            active_case: ActiveCase::Jcf(best.case_id),
            feasible: true,
            cost: best.cost,
        }),
        None => fallback(&u_ref, barriers),
    }
}
