//! Small dense numeric kernels shared by both controllers.
//!
//! Everything here works for d ≤ 2 with a handful of affine rows, which is
//! the regime of a teleoperated vehicle near one or two obstacles. The QP is
//! solved by enumerating active sets, so it is exact and allocation-free.

use std::cmp::Ordering;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{check_dim, Vector, MAX_DIM};

/// Acceptance tolerance for affine rows when filtering QP candidates.
pub const FEASIBILITY_TOL: f64 = 1e-9;
pub const MAX_QP_ROWS: usize = 8;

/// Affine inequality `coeff · u + constant ≥ 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineRow {
    pub coeff: Vector,
    pub constant: f64,
}

impl AffineRow {
    pub fn new(coeff: Vector, constant: f64) -> Self {
        Self { coeff, constant }
    }

    #[inline]
    pub fn value(&self, u: &Vector) -> f64 {
        self.coeff.dot(u) + self.constant
    }

    /// Magnitude of the terms in `value`, used to scale tolerances.
    pub fn scale(&self, u: &Vector) -> f64 {
        1.0 + self.constant.abs() + self.coeff.norm() * u.norm()
    }

    pub fn is_satisfied(&self, u: &Vector, tol: f64) -> bool {
        self.value(u) >= -tol * self.scale(u)
    }

    fn is_finite(&self) -> bool {
        self.coeff.is_finite() && self.constant.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QpSolution {
    pub point: Vector,
    active: [usize; MAX_DIM],
    n_active: usize,
}

impl QpSolution {
    /// Indices of the rows held at equality by the winning active set.
    pub fn active_rows(&self) -> &[usize] {
        &self.active[..self.n_active]
    }
}

/// `argmin ‖u − target‖²` subject to every row being nonnegative.
///
/// Returns `Ok(None)` when the rows have no common feasible point.
pub fn qp_closest(target: &Vector, rows: &[AffineRow]) -> Result<Option<QpSolution>> {
    let d = target.dim();
    check_dim(d)?;
    target.ensure_finite("qp target")?;
    if rows.len() > MAX_QP_ROWS {
        return Err(Error::InvalidParameter(format!(
            "at most {MAX_QP_ROWS} rows supported, got {}",
            rows.len()
        )));
    }
    for row in rows {
        row.coeff.ensure_dim(d)?;
        if !row.is_finite() {
            return Err(Error::NonFinite("qp row"));
        }
    }

    let mut best: Option<(f64, QpSolution)> = None;
    let mut consider = |point: Vector, active: &[usize]| {
        if !point.is_finite() || !rows.iter().all(|r| r.is_satisfied(&point, FEASIBILITY_TOL)) {
            return;
        }
        let cost = (point - *target).norm_sq();
        let mut sol = QpSolution {
            point,
            active: [0; MAX_DIM],
            n_active: active.len(),
        };
        sol.active[..active.len()].copy_from_slice(active);
        let better = match &best {
            None => true,
            Some((best_cost, best_sol)) => {
                compare_candidates(cost, &point, *best_cost, &best_sol.point) == Ordering::Less
            }
        };
        if better {
            best = Some((cost, sol));
        }
    };

    consider(*target, &[]);
    for (i, row) in rows.iter().enumerate() {
        if let Some(p) = project_onto_hyperplane(target, row) {
            consider(p, &[i]);
        }
    }
    if d == 2 {
        for i in 0..rows.len() {
            for j in (i + 1)..rows.len() {
                if let Some(p) = intersect_lines(&rows[i], &rows[j]) {
                    consider(p, &[i, j]);
                }
            }
        }
    }
    Ok(best.map(|(_, sol)| sol))
}

/// Cost first, then smaller norm, then lexicographic order.
fn compare_candidates(cost_a: f64, a: &Vector, cost_b: f64, b: &Vector) -> Ordering {
    let tol = 1e-12 * (1.0 + cost_a.abs().max(cost_b.abs()));
    if (cost_a - cost_b).abs() > tol {
        return cost_a.partial_cmp(&cost_b).unwrap_or(Ordering::Equal);
    }
    let (na, nb) = (a.norm_sq(), b.norm_sq());
    if (na - nb).abs() > 1e-12 * (1.0 + na.max(nb)) {
        return na.partial_cmp(&nb).unwrap_or(Ordering::Equal);
    }
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

/// Closest point to `target` on `coeff · u + constant = 0`.
pub(crate) fn project_onto_hyperplane(target: &Vector, row: &AffineRow) -> Option<Vector> {
    let nsq = row.coeff.norm_sq();
    if nsq <= 1e-24 {
        return None;
    }
    Some(*target - row.coeff * (row.value(target) / nsq))
}

fn intersect_lines(a: &AffineRow, b: &AffineRow) -> Option<Vector> {
    let (a0, a1) = (a.coeff[0], a.coeff[1]);
    let (b0, b1) = (b.coeff[0], b.coeff[1]);
    let det = a0 * b1 - a1 * b0;
    if det.abs() <= 1e-12 * a.coeff.norm() * b.coeff.norm() || det == 0.0 {
        return None;
    }
    // a·u = −ca, b·u = −cb
    let (ra, rb) = (-a.constant, -b.constant);
    Some(Vector::new2((ra * b1 - a1 * rb) / det, (a0 * rb - ra * b0) / det))
}

/// Euclidean projection onto the ball `‖F‖² ≤ radius_sq`.
///
/// A negative `radius_sq` is treated as zero.
pub fn project_to_ball(target: &Vector, radius_sq: f64) -> Vector {
    let r2 = radius_sq.max(0.0);
    let n2 = target.norm_sq();
    if n2 <= r2 {
        return *target;
    }
    *target * (r2.sqrt() / n2.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolyRealRoots {
    /// Ascending.
    pub roots: Vec<f64>,
    /// Largest |p(root)| over the returned roots.
    pub residual: f64,
}

/// Horner evaluation; coefficients are ordered from the highest degree down.
pub fn poly_eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().fold(0.0, |acc, &c| acc * x + c)
}

fn poly_eval_with_derivative(coeffs: &[f64], x: f64) -> (f64, f64) {
    let mut p = 0.0;
    let mut dp = 0.0;
    for &c in coeffs {
        dp = dp * x + p;
        p = p * x + c;
    }
    (p, dp)
}

/// Product of two polynomials (highest degree first).
pub fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Sum of two polynomials (highest degree first), aligned at the constant term.
pub fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    let mut out = vec![0.0; n];
    for (i, x) in a.iter().rev().enumerate() {
        out[n - 1 - i] += x;
    }
    for (i, x) in b.iter().rev().enumerate() {
        out[n - 1 - i] += x;
    }
    out
}

pub fn poly_scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// Complex roots whose imaginary part is below this fraction of `1 + |re|`
/// are treated as real.
const IMAG_TOL: f64 = 1e-7;
const LEADING_ZERO_TOL: f64 = 1e-14;

/// All real roots of a polynomial given highest degree first.
///
/// Leading coefficients that are negligible relative to the largest one are
/// dropped, so a nominal quintic with a vanishing leading term is solved as a
/// quartic. Roots come from the companion-matrix eigenvalues and are then
/// Newton-polished.
pub fn real_roots(coeffs: &[f64]) -> Result<PolyRealRoots> {
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("polynomial coefficients"));
    }
    let max_abs = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if max_abs == 0.0 {
        return Err(Error::ZeroPolynomial);
    }
    let start = coeffs
        .iter()
        .position(|c| c.abs() > LEADING_ZERO_TOL * max_abs)
        .expect("nonzero max implies a significant coefficient");
    let p = &coeffs[start..];
    let degree = p.len() - 1;

    let mut raw: Vec<f64> = match degree {
        0 => Vec::new(),
        1 => vec![-p[1] / p[0]],
        2 => quadratic_real_roots(p[0], p[1], p[2]),
        _ => companion_real_roots(p),
    };

    for r in raw.iter_mut() {
        *r = newton_polish(p, *r);
    }
    raw.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    raw.dedup_by(|a, b| (*a - *b).abs() <= 1e-10 * (1.0 + a.abs().max(b.abs())));
    let residual = raw
        .iter()
        .map(|&r| poly_eval(p, r).abs())
        .fold(0.0, f64::max);
    Ok(PolyRealRoots {
        roots: raw,
        residual,
    })
}

fn quadratic_real_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        let re = -b / (2.0 * a);
        let im = (-disc).sqrt() / (2.0 * a.abs());
        return if im <= IMAG_TOL * (1.0 + re.abs()) {
            vec![re]
        } else {
            Vec::new()
        };
    }
    // Numerically stable form avoids cancellation in −b ± √disc.
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        return vec![0.0, 0.0];
    }
    vec![q / a, c / q]
}

fn companion_real_roots(p: &[f64]) -> Vec<f64> {
    let n = p.len() - 1;
    let lead = p[0];
    let mut c = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        c[(i, i - 1)] = 1.0;
    }
    for i in 0..n {
        // last column holds −a_i of the monic polynomial, constant term first
        c[(i, n - 1)] = -p[n - i] / lead;
    }
    c.complex_eigenvalues()
        .iter()
        .filter(|z| z.re.is_finite() && z.im.abs() <= IMAG_TOL * (1.0 + z.re.abs()))
        .map(|z| z.re)
        .collect()
}

fn newton_polish(p: &[f64], mut x: f64) -> f64 {
    let mut best = poly_eval(p, x).abs();
    for _ in 0..8 {
        let (v, dv) = poly_eval_with_derivative(p, x);
        if dv == 0.0 || !dv.is_finite() {
            break;
        }
        let next = x - v / dv;
        let r = poly_eval(p, next).abs();
        if !(r < best) {
            break;
        }
        best = r;
        x = next;
        if r == 0.0 {
            break;
        }
    }
    x
}

/// Orthonormal complement of a nonzero vector `g`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrthComplement {
    /// The single column of U⊥ for d = 2; `None` for d = 1.
    pub basis: Option<Vector>,
    pub parallel_unit: Vector,
}

/// For d = 2 the basis column is `g` rotated by +90° and normalized.
pub fn orth_complement(g: &Vector) -> Result<OrthComplement> {
    check_dim(g.dim())?;
    let n = g.norm();
    if !(n > 1e-12) {
        return Err(Error::Singular("orthogonal complement of a near-zero vector"));
    }
    let parallel_unit = *g * (1.0 / n);
    let basis = (g.dim() == 2).then(|| parallel_unit.perp());
    Ok(OrthComplement {
        basis,
        parallel_unit,
    })
}
