//! Barrier functions h(x_p) and the second-order CBF row they induce on the
//! acceleration command.

use serde::{Deserialize, Serialize};

use crate::dynamics::RobotState;
use crate::error::{Error, Result};
use crate::linalg::{SymMat, Vector};
use crate::optkernel::AffineRow;

/// A CBF inequality `linear_coeff · u + constant ≥ 0`.
pub type CbfRow = AffineRow;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BarrierShape {
    /// Safe side is `normal · p ≤ offset`.
    HalfPlane { normal: Vector, offset: f64 },
    /// Circular obstacle, inflated by the robot radius.
    Disc {
        center: Vector,
        radius: f64,
        #[serde(default)]
        robot_radius: f64,
    },
    /// Rounded rectangle with half-lengths `a`, `b` and corner radius `r`.
    SuperEllipse { center: Vector, a: f64, b: f64, r: f64 },
}

impl BarrierShape {
    pub fn dim(&self) -> usize {
        match self {
            BarrierShape::HalfPlane { normal, .. } => normal.dim(),
            BarrierShape::Disc { center, .. } | BarrierShape::SuperEllipse { center, .. } => {
                center.dim()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match self {
            BarrierShape::HalfPlane { normal, offset } => {
                if !normal.is_finite() || !offset.is_finite() {
                    return Err(Error::NonFinite("half-plane"));
                }
                if (normal.norm() - 1.0).abs() > 1e-9 {
                    return bad(format!("half-plane normal must be unit length, got {normal:?}"));
                }
            }
            BarrierShape::Disc {
                center,
                radius,
                robot_radius,
            } => {
                center.ensure_finite("disc center")?;
                if !(*radius > 0.0) || !(*robot_radius >= 0.0) {
                    return bad(format!("disc radius {radius}, robot radius {robot_radius}"));
                }
            }
            BarrierShape::SuperEllipse { center, a, b, r } => {
                center.ensure_finite("super-ellipse center")?;
                if center.dim() != 2 {
                    return bad("super-ellipse barriers are planar".into());
                }
                if !(*a > 0.0 && *b > 0.0 && *r > 0.0) {
                    return bad(format!("super-ellipse a={a}, b={b}, r={r}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarrierEval {
    pub value: f64,
    pub gradient: Vector,
    pub hessian: SymMat,
}

/// Coefficients of the Hurwitz polynomial s² + k2·s + k1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CbfGains {
    pub k1: f64,
    pub k2: f64,
}

impl Default for CbfGains {
    fn default() -> Self {
        Self { k1: 1.0, k2: 2.0 }
    }
}

impl CbfGains {
    pub fn new(k1: f64, k2: f64) -> Result<Self> {
        let g = Self { k1, k2 };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k1 > 0.0 && self.k2 > 0.0 && self.k1.is_finite() && self.k2.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "CBF gains must be positive, got k1={}, k2={}",
                self.k1, self.k2
            )))
        }
    }
}

pub fn evaluate(shape: &BarrierShape, position: &Vector) -> Result<BarrierEval> {
    position.ensure_finite("position")?;
    position.ensure_dim(shape.dim())?;
    let d = position.dim();
    match shape {
        BarrierShape::HalfPlane { normal, offset } => Ok(BarrierEval {
            value: offset - normal.dot(position),
            gradient: -*normal,
            hessian: SymMat::zeros(d),
        }),
        BarrierShape::Disc {
            center,
            radius,
            robot_radius,
        } => {
            let rel = *position - *center;
            let dist = rel.norm();
            if dist <= 1e-12 {
                return Err(Error::Singular("disc barrier evaluated at its center"));
            }
            let n = rel * (1.0 / dist);
            Ok(BarrierEval {
                value: dist - (radius + robot_radius),
                gradient: n,
                hessian: SymMat::identity_plus_outer(d, 1.0 / dist, -1.0 / dist, &n),
            })
        }
        BarrierShape::SuperEllipse { center, a, b, r } => {
            let (tx, gx, hx) = power_term(position[0] - center[0], *a, 2.0 * a / r);
            let (ty, gy, hy) = power_term(position[1] - center[1], *b, 2.0 * b / r);
            Ok(BarrierEval {
                value: tx + ty - 1.0,
                gradient: Vector::new2(gx, gy),
                hessian: SymMat::diag(&Vector::new2(hx, hy)),
            })
        }
    }
}

/// |z/s|^n and its first two derivatives with respect to z.
fn power_term(z: f64, s: f64, n: f64) -> (f64, f64, f64) {
    let w = (z / s).abs();
    let sign = z.signum();
    let value = w.powf(n);
    let first = n * w.powf(n - 1.0) * sign / s;
    let second = n * (n - 1.0) * w.powf(n - 2.0) / (s * s);
    (value, first, second)
}

/// Second-order CBF row for the double integrator:
/// `∇hᵀ u + x_vᵀ ∇²h x_v + k1 h + k2 ∇hᵀ x_v ≥ 0`.
pub fn cbf_row(eval: &BarrierEval, state: &RobotState, gains: &CbfGains) -> CbfRow {
    let v = &state.velocity;
    let constant = eval.hessian.quad_form(v) + gains.k1 * eval.value + gains.k2 * eval.gradient.dot(v);
    AffineRow::new(eval.gradient, constant)
}

/// Evaluates every barrier at the state and returns the rows plus min h.
pub fn cbf_rows(
    shapes: &[BarrierShape],
    state: &RobotState,
    gains: &CbfGains,
) -> Result<(Vec<CbfRow>, f64)> {
    let mut rows = Vec::with_capacity(shapes.len());
    let mut h_min = f64::INFINITY;
    for shape in shapes {
        let eval = evaluate(shape, &state.position)?;
        h_min = h_min.min(eval.value);
        rows.push(cbf_row(&eval, state, gains));
    }
    Ok((rows, h_min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wall() -> BarrierShape {
        BarrierShape::HalfPlane {
            normal: Vector::new1(1.0),
            offset: 6.0,
        }
    }

    fn field_obstacle() -> BarrierShape {
        BarrierShape::SuperEllipse {
            center: Vector::new2(1.0, -2.0),
            a: 4.5,
            b: 1.5,
            r: 0.5,
        }
    }

    #[test]
    fn wall_barrier_values() {
        let e = evaluate(&wall(), &Vector::new1(0.0)).unwrap();
        assert_eq!(e.value, 6.0);
        assert_eq!(e.gradient, Vector::new1(-1.0));
        assert_eq!(e.hessian, SymMat::zeros(1));
        assert_eq!(evaluate(&wall(), &Vector::new1(6.0)).unwrap().value, 0.0);
    }

    #[test]
    fn super_ellipse_center_is_minus_one() {
        let e = evaluate(&field_obstacle(), &Vector::new2(1.0, -2.0)).unwrap();
        assert_eq!(e.value, -1.0);
    }

    #[test]
    fn super_ellipse_boundary_on_axes() {
        let e = evaluate(&field_obstacle(), &Vector::new2(1.0 + 4.5, -2.0)).unwrap();
        assert!(e.value.abs() < 1e-12);
        let e = evaluate(&field_obstacle(), &Vector::new2(1.0, -2.0 - 1.5)).unwrap();
        assert!(e.value.abs() < 1e-12);
    }

    #[test]
    fn disc_singular_at_center() {
        let disc = BarrierShape::Disc {
            center: Vector::new2(1.0, 1.0),
            radius: 0.5,
            robot_radius: 0.25,
        };
        assert!(matches!(
            evaluate(&disc, &Vector::new2(1.0, 1.0)),
            Err(Error::Singular(_))
        ));
        let e = evaluate(&disc, &Vector::new2(3.0, 1.0)).unwrap();
        assert!((e.value - 1.25).abs() < 1e-15);
    }

    #[test]
    fn wall_cbf_row_at_rest() {
        // −u + 6 ≥ 0 with k1 = 1, k2 = 2
        let state = RobotState::at_rest(Vector::new1(0.0));
        let e = evaluate(&wall(), &state.position).unwrap();
        let row = cbf_row(&e, &state, &CbfGains::new(1.0, 2.0).unwrap());
        assert_eq!(row.coeff, Vector::new1(-1.0));
        assert_eq!(row.constant, 6.0);
    }

    #[test]
    fn zero_velocity_gives_k1_h() {
        let state = RobotState::at_rest(Vector::new2(10.0, 3.0));
        let e = evaluate(&field_obstacle(), &state.position).unwrap();
        let gains = CbfGains::new(0.7, 3.0).unwrap();
        let row = cbf_row(&e, &state, &gains);
        assert_eq!(row.constant, gains.k1 * e.value);
        assert!(row.value(&Vector::zeros(2)) >= 0.0);
    }

    #[test]
    fn validation() {
        assert!(BarrierShape::HalfPlane {
            normal: Vector::new2(1.0, 1.0),
            offset: 0.0
        }
        .validate()
        .is_err());
        assert!(BarrierShape::SuperEllipse {
            center: Vector::new2(0.0, 0.0),
            a: 1.0,
            b: 0.0,
            r: 0.5
        }
        .validate()
        .is_err());
        assert!(CbfGains::new(1.0, 0.0).is_err());
        assert!(field_obstacle().validate().is_ok());
    }

    #[test]
    fn toml_shape_roundtrip() {
        let s: BarrierShape = toml::from_str(
            "kind = \"super_ellipse\"\ncenter = [0.0, 4.0]\na = 4.5\nb = 1.5\nr = 0.5\n",
        )
        .unwrap();
        assert_eq!(s.dim(), 2);
        assert!(toml::from_str::<BarrierShape>("kind = \"disc\"\ncenter=[0.0]\nradius=1.0\nextra=1\n").is_err());
    }

    /// Central finite differences of h, used as an independent oracle.
    fn fd_grad_hess(shape: &BarrierShape, p: &Vector) -> (Vector, [[f64; 2]; 2]) {
        let step = 1e-5;
        let f = |q: Vector| evaluate(shape, &q).unwrap().value;
        let mut g = Vector::zeros(2);
        let mut h = [[0.0; 2]; 2];
        for i in 0..2 {
            let ei = Vector::axis(2, i).unwrap() * step;
            g[i] = (f(*p + ei) - f(*p - ei)) / (2.0 * step);
            let gi = |q: Vector| {
                let e = Vector::axis(2, i).unwrap() * step;
                (f(q + e) - f(q - e)) / (2.0 * step)
            };
            for j in 0..2 {
                let ej = Vector::axis(2, j).unwrap() * step;
                h[j][i] = (gi(*p + ej) - gi(*p - ej)) / (2.0 * step);
            }
        }
        (g, h)
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn super_ellipse_derivatives_match_finite_differences() {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let shape = field_obstacle();
        for _ in 0..20 {
            // stay off the axes where |z|^(n−2) loses smoothness for small n
            let p = Vector::new2(
                1.0 + rng.random_range(0.5..5.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
                -2.0 + rng.random_range(0.3..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
            );
            let e = evaluate(&shape, &p).unwrap();
            let (g, h) = fd_grad_hess(&shape, &p);
            for i in 0..2 {
                assert!(rel_close(e.gradient[i], g[i], 1e-5), "grad {i}: {} vs {}", e.gradient[i], g[i]);
                for j in 0..2 {
                    assert!(rel_close(e.hessian.get(i, j), h[i][j], 1e-4), "hess {i}{j}");
                }
            }
            assert!(e.hessian.asymmetry() <= 1e-12);
        }
    }

    #[test]
    fn disc_derivatives_match_finite_differences() {
        let shape = BarrierShape::Disc {
            center: Vector::new2(0.5, -1.0),
            radius: 1.0,
            robot_radius: 0.25,
        };
        for p in [Vector::new2(3.0, 0.5), Vector::new2(-1.0, -2.5), Vector::new2(0.6, 2.0)] {
            let e = evaluate(&shape, &p).unwrap();
            let (g, h) = fd_grad_hess(&shape, &p);
            for i in 0..2 {
                assert!(rel_close(e.gradient[i], g[i], 1e-5));
                for j in 0..2 {
                    assert!(rel_close(e.hessian.get(i, j), h[i][j], 1e-4));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn row_is_affine_in_u(px in -5.0..5.0f64, vx in -2.0..2.0f64, u in -10.0..10.0f64) {
            let state = RobotState::new(Vector::new1(px), Vector::new1(vx)).unwrap();
            let e = evaluate(&wall(), &state.position).unwrap();
            let row = cbf_row(&e, &state, &CbfGains::default());
            let one = row.coeff.dot(&Vector::new1(u));
            let two = row.coeff.dot(&Vector::new1(2.0 * u));
            prop_assert_eq!(two, 2.0 * one);
        }
    }
}
