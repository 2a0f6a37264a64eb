//! Fixed-capacity vectors and symmetric matrices for the d ∈ {1, 2} setting.
//!
//! Every quantity in the controller lives in the same d-dimensional space
//! (position, velocity, acceleration, force), and d is chosen per scenario.
//! These types keep the data on the stack and carry the dimension at runtime.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 2;

pub(crate) fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::UnsupportedDimension(dim));
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
pub struct Vector {
    comps: [f64; MAX_DIM],
    dim: usize,
}

impl Vector {
    /// Panics if `dim` is not 1 or 2.
    pub fn zeros(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "unsupported dimension {dim}");
        Self { comps: [0.0; MAX_DIM], dim }
    }

    pub fn new1(x: f64) -> Self {
        Self { comps: [x, 0.0], dim: 1 }
    }

    pub fn new2(x: f64, y: f64) -> Self {
        Self { comps: [x, y], dim: 2 }
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        check_dim(values.len())?;
        let mut v = Self::zeros(values.len());
        v.comps[..values.len()].copy_from_slice(values);
        Ok(v)
    }

    /// Unit vector along `axis`.
    pub fn axis(dim: usize, axis: usize) -> Result<Self> {
        check_dim(dim)?;
        if axis >= dim {
            return Err(Error::InvalidParameter(format!(
                "axis {axis} out of range for dimension {dim}"
            )));
        }
        let mut v = Self::zeros(dim);
        v.comps[axis] = 1.0;
        Ok(v)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.comps[..self.dim]
    }

    #[inline]
    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        self.as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| a * b)
            .sum()
    }

    #[inline]
    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.as_slice().iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|x| x.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.as_slice().iter().all(|&x| x == 0.0)
    }

    pub(crate) fn ensure_dim(&self, dim: usize) -> Result<()> {
        if self.dim != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: self.dim,
            });
        }
        Ok(())
    }

    pub(crate) fn ensure_finite(&self, what: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    /// Rotation by +90° in the plane. Only meaningful for d = 2.
    pub(crate) fn perp(&self) -> Vector {
        debug_assert_eq!(self.dim, 2);
        Vector::new2(-self.comps[1], self.comps[0])
    }

    pub fn distance(&self, other: &Vector) -> f64 {
        (*self - *other).norm()
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.as_slice()).finish()
    }
}

impl Index<usize> for Vector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.as_slice()[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        let dim = self.dim;
        &mut self.comps[..dim][i]
    }
}

impl Add for Vector {
    type Output = Vector;

    fn add(mut self, rhs: Vector) -> Vector {
        self += rhs;
        self
    }
}

impl AddAssign for Vector {
    fn add_assign(&mut self, rhs: Vector) {
        debug_assert_eq!(self.dim, rhs.dim);
        for i in 0..self.dim {
            self.comps[i] += rhs.comps[i];
        }
    }
}

impl Sub for Vector {
    type Output = Vector;

    fn sub(mut self, rhs: Vector) -> Vector {
        self -= rhs;
        self
    }
}

impl SubAssign for Vector {
    fn sub_assign(&mut self, rhs: Vector) {
        debug_assert_eq!(self.dim, rhs.dim);
        for i in 0..self.dim {
            self.comps[i] -= rhs.comps[i];
        }
    }
}

impl Neg for Vector {
    type Output = Vector;

    fn neg(mut self) -> Vector {
        for c in &mut self.comps[..self.dim] {
            *c = -*c;
        }
        self
    }
}

impl Mul<f64> for Vector {
    type Output = Vector;

    fn mul(mut self, s: f64) -> Vector {
        for c in &mut self.comps[..self.dim] {
            *c *= s;
        }
        self
    }
}

impl Mul<Vector> for f64 {
    type Output = Vector;

    fn mul(self, v: Vector) -> Vector {
        v * self
    }
}

impl Serialize for Vector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.as_slice().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Vector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(deserializer)?;
        Vector::from_slice(&values).map_err(serde::de::Error::custom)
    }
}

/// Symmetric d×d matrix (used for barrier Hessians).
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct SymMat {
    m: [[f64; MAX_DIM]; MAX_DIM],
    dim: usize,
}

impl SymMat {
    pub fn zeros(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "unsupported dimension {dim}");
        Self {
            m: [[0.0; MAX_DIM]; MAX_DIM],
            dim,
        }
    }

    pub fn diag(d: &Vector) -> Self {
        let mut out = Self::zeros(d.dim());
        for i in 0..d.dim() {
            out.m[i][i] = d[i];
        }
        out
    }

    /// Identity scaled by `a` plus `b`·v vᵀ.
    pub fn identity_plus_outer(dim: usize, a: f64, b: f64, v: &Vector) -> Self {
        let mut out = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                out.m[i][j] = b * v[i] * v[j] + if i == j { a } else { 0.0 };
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.dim && j < self.dim);
        self.m[i][j]
    }

    pub fn mul_vec(&self, v: &Vector) -> Vector {
        let mut out = Vector::zeros(self.dim);
        for i in 0..self.dim {
            out[i] = (0..self.dim).map(|j| self.m[i][j] * v[j]).sum();
        }
        out
    }

    /// vᵀ M v
    pub fn quad_form(&self, v: &Vector) -> f64 {
        v.dot(&self.mul_vec(v))
    }

    pub fn asymmetry(&self) -> f64 {
        if self.dim == 2 {
            (self.m[0][1] - self.m[1][0]).abs()
        } else {
            0.0
        }
    }

    pub fn is_finite(&self) -> bool {
        (0..self.dim).all(|i| (0..self.dim).all(|j| self.m[i][j].is_finite()))
    }
}
