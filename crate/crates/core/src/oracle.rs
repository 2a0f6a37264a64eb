//! Slow reference solvers for cross-checking the closed-form ones.
//!
//! The joint problem is checked against a multi-restart generating-set
//! search, the active-set QP against a coarse-to-fine grid. Both work from
//! seeded random instances so a run is reproducible.

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::barriers::{cbf_rows, evaluate, BarrierShape, CbfGains};
use crate::dynamics::RobotState;
use crate::energy::{EnergyTank, StabilityParams};
use crate::error::Result;
use crate::jcf::{jcf_candidates, jcf_solve, JcfProblem, JcfWeights};
use crate::linalg::Vector;
use crate::optkernel::{qp_closest, AffineRow};
use crate::scf::ControllerConfig;

pub const JCF_COST_TOL: f64 = 1e-4;
pub const JCF_KKT_TOL: f64 = 1e-6;
pub const QP_POINT_TOL: f64 = 2e-3;

/// How many failing instances a report keeps for display.
const KEPT_FAILURES: usize = 5;

fn uniform2<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> Vector {
    Vector::new2(rng.random_range(lo..hi), rng.random_range(lo..hi))
}

fn unit2<R: Rng>(rng: &mut R) -> Vector {
    let a = rng.random_range(0.0..std::f64::consts::TAU);
    Vector::new2(a.cos(), a.sin())
}

fn random_barrier<R: Rng>(rng: &mut R) -> BarrierShape {
    match rng.random_range(0..3) {
        0 => BarrierShape::HalfPlane {
            normal: unit2(rng),
            offset: rng.random_range(1.0..4.0),
        },
        1 => BarrierShape::Disc {
            center: uniform2(rng, -3.0, 3.0),
            radius: rng.random_range(0.3..2.0),
            robot_radius: 0.25,
        },
        _ => BarrierShape::SuperEllipse {
            center: uniform2(rng, -3.0, 3.0),
            a: 4.5,
            b: 1.5,
            r: 0.5,
        },
    }
}

#[derive(Clone, Debug)]
pub struct JcfInstance {
    pub state: RobotState,
    pub x_vd: Vector,
    pub barrier: BarrierShape,
    pub tank_level: f64,
    pub config: ControllerConfig,
    pub problem: JcfProblem,
}

/// A 2-D instance with one barrier, the robot strictly inside the safe set.
pub fn random_jcf_instance<R: Rng>(rng: &mut R) -> Result<JcfInstance> {
    let barrier = random_barrier(rng);
    let position = loop {
        let p = uniform2(rng, -6.0, 6.0);
        let h = evaluate(&barrier, &p)?.value;
        if h > 0.02 && h < 3.0 {
            break p;
        }
    };
    let state = RobotState::new(position, uniform2(rng, -2.0, 2.0))?;
    let x_vd = uniform2(rng, -2.0, 2.0);
    let stability = StabilityParams {
        k_v: rng.random_range(0.5..5.0),
        ..StabilityParams::default()
    };
    let tank_level = rng.random_range(0.0..=stability.e_max);
    let config = ControllerConfig {
        stability,
        gains: CbfGains::default(),
        dt_ref_controller: 0.5,
    };
    let (rows, _) = cbf_rows(std::slice::from_ref(&barrier), &state, &config.gains)?;
    let tank = EnergyTank::new(tank_level, &stability)?;
    let problem = JcfProblem::new(&state, &x_vd, &rows, &tank, &config, JcfWeights::default())?;
    Ok(JcfInstance {
        state,
        x_vd,
        barrier,
        tank_level,
        config,
        problem,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OraclePoint {
    pub u: Vector,
    pub force: Vector,
    pub cost: f64,
}

/// Rows of the u-only form: the problem rows plus `C₁ − C₂ᵀu ≥ 0`.
fn reduced_rows(p: &JcfProblem) -> Vec<AffineRow> {
    let mut rows = p.rows.clone();
    rows.push(AffineRow::new(-p.c2, p.c1));
    rows
}

/// Best force for a fixed u: δ clipped to the ball of radius √(C₁ − C₂ᵀu).
fn best_force(p: &JcfProblem, u: &Vector) -> Vector {
    let delta = *u - p.u_ref;
    let r = (p.c1 - p.c2.dot(u)).max(0.0).sqrt();
    let n = delta.norm();
    if n <= r {
        delta
    } else {
        delta * (r / n)
    }
}

fn reduced_cost(p: &JcfProblem, u: &Vector) -> f64 {
    p.cost(u, &best_force(p, u))
}

fn strictly_feasible(rows: &[AffineRow], u: &Vector) -> bool {
    rows.iter().all(|r| r.value(u) >= 0.0)
}

/// Alternating projections onto the half-planes. `None` if they never meet.
fn feasible_start(rows: &[AffineRow], start: Vector) -> Option<Vector> {
    let mut u = start;
    for _ in 0..2000 {
        if strictly_feasible(rows, &u) {
            return Some(u);
        }
        for r in rows {
            let v = r.value(&u);
            let g2 = r.coeff.norm_sq();
            if v < 0.0 {
                if g2 == 0.0 {
                    return None;
                }
                // Land a hair inside so rounding does not undo the projection.
                u = u + r.coeff * ((-v) / g2 * (1.0 + 1e-12) + 1e-15);
            }
        }
    }
    strictly_feasible(rows, &u).then_some(u)
}

/// Poll directions: the axes plus the normals and tangents of every row.
fn poll_directions(rows: &[AffineRow]) -> Vec<Vector> {
    let mut dirs = vec![
        Vector::new2(1.0, 0.0),
        Vector::new2(-1.0, 0.0),
        Vector::new2(0.0, 1.0),
        Vector::new2(0.0, -1.0),
    ];
    for r in rows {
        let n = r.coeff.norm();
        if n == 0.0 {
            continue;
        }
        let g = r.coeff * (1.0 / n);
        let t = Vector::new2(-g[1], g[0]);
        dirs.extend([g, g * -1.0, t, t * -1.0]);
    }
    dirs
}

fn pattern_search<F: Fn(&Vector) -> f64>(
    f: &F,
    rows: &[AffineRow],
    dirs: &[Vector],
    start: Vector,
) -> Vector {
    let mut x = start;
    let mut fx = f(&x);
    let mut step = 1.0;
    let mut budget = 200_000;
    while step > 1e-11 && budget > 0 {
        budget -= 1;
        let mut moved = false;
        for d in dirs {
            let y = x + *d * step;
            if !strictly_feasible(rows, &y) {
                continue;
            }
            let fy = f(&y);
            // Sufficient decrease keeps rounding noise from counting as progress.
            if fy < fx - 1e-4 * step * step - 1e-14 * (1.0 + fx.abs()) {
                x = y;
                fx = fy;
                moved = true;
                break;
            }
        }
        if moved {
            step *= 2.0;
        } else {
            step *= 0.5;
        }
    }
    x
}

/// Multi-restart generating-set search on the joint problem (2-D only).
///
/// The force is eliminated in closed form, leaving a convex problem in u
/// over two half-planes. `None` when no feasible start is found.
pub fn jcf_oracle<R: Rng>(p: &JcfProblem, rng: &mut R, restarts: usize) -> Option<OraclePoint> {
    let rows = reduced_rows(p);
    let dirs = poll_directions(&rows);
    let f = |u: &Vector| reduced_cost(p, u);
    let mut best: Option<OraclePoint> = None;
    for i in 0..restarts.max(1) {
        let guess = if i == 0 {
            p.u_ref
        } else {
            p.u_ref + uniform2(rng, -3.0, 3.0)
        };
        let Some(start) = feasible_start(&rows, guess) else {
            continue;
        };
        let u = pattern_search(&f, &rows, &dirs, start);
        let force = best_force(p, &u);
        let cost = p.cost(&u, &force);
        if best.is_none_or(|b| cost < b.cost) {
            best = Some(OraclePoint { u, force, cost });
        }
    }
    best
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct JcfOracleReport {
    pub instances: usize,
    pub infeasible: usize,
    pub max_cost_gap: f64,
    pub max_point_distance: f64,
    pub max_kkt_residual: f64,
    pub failures: usize,
    pub examples: Vec<String>,
}

impl JcfOracleReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Compares the case enumeration with [`jcf_oracle`] on `n` instances.
pub fn jcf_oracle_check(n: usize, seed: u64) -> Result<JcfOracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = JcfOracleReport {
        instances: n,
        ..Default::default()
    };
    for idx in 0..n {
        let inst = random_jcf_instance(&mut rng)?;
        let p = &inst.problem;
        let cands = jcf_candidates(p)?;
        let kkt = cands.iter().map(|c| c.kkt_residual).fold(0.0, f64::max);
        rep.max_kkt_residual = rep.max_kkt_residual.max(kkt);
        let closed = jcf_solve(p)?;
        let oracle = jcf_oracle(p, &mut rng, 6);
        let problem = match (closed, oracle) {
            (None, None) => {
                rep.infeasible += 1;
                None
            }
            (Some(c), Some(o)) => {
                let gap = (c.cost - o.cost).abs();
                let dist = c.u.distance(&o.u).max(c.force.distance(&o.force));
                rep.max_cost_gap = rep.max_cost_gap.max(gap);
                rep.max_point_distance = rep.max_point_distance.max(dist);
                (gap > JCF_COST_TOL).then(|| {
                    format!(
                        "instance {idx}: closed form {} cost {:.6e}, oracle cost {:.6e}",
                        c.case_id, c.cost, o.cost
                    )
                })
            }
            (c, o) => Some(format!(
                "instance {idx}: feasibility disagrees (closed form {}, oracle {})",
                c.is_some(),
                o.is_some()
            )),
        };
        let problem = problem.or_else(|| {
            (kkt > JCF_KKT_TOL).then(|| format!("instance {idx}: KKT residual {kkt:.3e}"))
        });
        if let Some(msg) = problem {
            rep.failures += 1;
            if rep.examples.len() < KEPT_FAILURES {
                rep.examples.push(msg);
            }
        }
    }
    Ok(rep)
}

#[derive(Clone, Debug)]
pub struct QpInstance {
    pub target: Vector,
    pub rows: Vec<AffineRow>,
}

/// 1-D or 2-D, one to three rows, feasible by construction.
pub fn random_qp_instance<R: Rng>(rng: &mut R) -> QpInstance {
    let dim = rng.random_range(1..=2);
    let draw = |rng: &mut R, lo: f64, hi: f64| -> Vector {
        if dim == 1 {
            Vector::new1(rng.random_range(lo..hi))
        } else {
            uniform2(rng, lo, hi)
        }
    };
    let inside = draw(rng, -2.0, 2.0);
    let n_rows = rng.random_range(1..=3);
    let rows = (0..n_rows)
        .map(|_| {
            let g = draw(rng, -2.0, 2.0);
            let g = if g.norm() < 0.2 { g + draw(rng, 0.5, 1.0) } else { g };
            let margin = rng.random_range(0.05..1.0);
            AffineRow::new(g, margin - g.dot(&inside))
        })
        .collect();
    QpInstance {
        target: draw(rng, -4.0, 4.0),
        rows,
    }
}

/// Coarse-to-fine grid over `origin + s·dir`, keeping points where every
/// row except `skip` holds. Returns the feasible point nearest `target`.
fn grid_on_line(
    target: &Vector,
    origin: &Vector,
    dir: &Vector,
    rows: &[AffineRow],
    skip: Option<usize>,
) -> Option<Vector> {
    const PER_PASS: usize = 2001;
    let feasible = |u: &Vector| {
        rows.iter()
            .enumerate()
            .all(|(i, r)| Some(i) == skip || r.value(u) >= 0.0)
    };
    let (mut center, mut half) = (0.0, 50.0);
    let mut best: Option<(f64, f64)> = None;
    loop {
        let spacing = 2.0 * half / (PER_PASS - 1) as f64;
        for i in 0..PER_PASS {
            let s = center - half + spacing * i as f64;
            let u = *origin + *dir * s;
            if !feasible(&u) {
                continue;
            }
            let d = u.distance(target);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((s, d));
            }
        }
        let (s, _) = best?;
        if spacing < 1e-10 {
            return Some(*origin + *dir * s);
        }
        center = s;
        half = 4.0 * spacing;
    }
}

fn vertex(r: &AffineRow, s: &AffineRow) -> Option<Vector> {
    let (a, b) = (r.coeff, s.coeff);
    let det = a[0] * b[1] - a[1] * b[0];
    if det.abs() < 1e-12 {
        return None;
    }
    Some(Vector::new2(
        (-r.constant * b[1] + s.constant * a[1]) / det,
        (-s.constant * a[0] + r.constant * b[0]) / det,
    ))
}

/// Closest feasible point by brute force: the target itself, a grid search
/// along every row boundary, and every pairwise corner.
pub fn grid_qp(target: &Vector, rows: &[AffineRow]) -> Option<Vector> {
    let all_hold = |u: &Vector| strictly_feasible(rows, u);
    if all_hold(target) {
        return Some(*target);
    }
    let mut cands = Vec::new();
    if target.dim() == 1 {
        cands.extend(grid_on_line(target, target, &Vector::new1(1.0), rows, None));
    } else {
        for (i, r) in rows.iter().enumerate() {
            let n2 = r.coeff.norm_sq();
            if n2 == 0.0 {
                continue;
            }
            let foot = *target - r.coeff * (r.value(target) / n2);
            let t = Vector::new2(-r.coeff[1], r.coeff[0]) * (1.0 / n2.sqrt());
            cands.extend(grid_on_line(target, &foot, &t, rows, Some(i)));
        }
        for i in 0..rows.len() {
            for j in (i + 1)..rows.len() {
                cands.extend(vertex(&rows[i], &rows[j]).filter(|v| {
                    rows.iter()
                        .enumerate()
                        .all(|(k, r)| k == i || k == j || r.value(v) >= 0.0)
                }));
            }
        }
    }
    cands
        .into_iter()
        .min_by(|a, b| a.distance(target).total_cmp(&b.distance(target)))
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct QpOracleReport {
    pub instances: usize,
    pub max_point_distance: f64,
    pub failures: usize,
    pub examples: Vec<String>,
}

impl QpOracleReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Compares [`qp_closest`] with [`grid_qp`] on `n` instances.
pub fn qp_oracle_check(n: usize, seed: u64) -> Result<QpOracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = QpOracleReport {
        instances: n,
        ..Default::default()
    };
    for idx in 0..n {
        let inst = random_qp_instance(&mut rng);
        let fast = qp_closest(&inst.target, &inst.rows)?.map(|s| s.point);
        let slow = grid_qp(&inst.target, &inst.rows);
        let msg = match (fast, slow) {
            (Some(a), Some(b)) => {
                let d = a.distance(&b);
                rep.max_point_distance = rep.max_point_distance.max(d);
                (d > QP_POINT_TOL).then(|| format!("instance {idx}: points differ by {d:.3e}"))
            }
            (a, b) => Some(format!(
                "instance {idx}: feasibility disagrees (active set {}, grid {})",
                a.is_some(),
                b.is_some()
            )),
        };
        if let Some(msg) = msg {
            rep.failures += 1;
            if rep.examples.len() < KEPT_FAILURES {
                rep.examples.push(msg);
            }
        }
    }
    Ok(rep)
}
