//! Constellation geometry under the uniform-hemisphere model.
//!
//! Each visible satellite is a unit vector `u` from the receiver with
//! `u₃ ≥ 0`. Row `s` of the design matrix is `(−u_sᵀ, 1)`, mapping the
//! parameter vector (position error, clock bias) onto a range measurement.

use nalgebra::{Matrix4, Vector3, Vector4, LU, U4};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{Error, Result};

/// Largest admissible condition number of `GᵀG`.
pub const MAX_CONDITION: f64 = 1e12;

/// Direction cosines of a satellite above the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitVector3([f64; 3]);

impl UnitVector3 {
    /// Normalises `v` and checks that it points into the upper hemisphere.
    pub fn new(v: [f64; 3]) -> Result<Self> {
        let n = Vector3::from(v).norm();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::InvalidInput(format!("cannot normalise {v:?}")));
        }
        let u = [v[0] / n, v[1] / n, v[2] / n];
        if u[2] < 0.0 {
            return Err(Error::InvalidInput(format!("{u:?} is below the horizon")));
        }
        Ok(Self(u))
    }

    /// Builds the direction with elevation cosine `up` and azimuth `az`.
    pub fn from_up_azimuth(up: f64, az: f64) -> Self {
        let up = up.clamp(0.0, 1.0);
        let r = (1.0 - up * up).max(0.0).sqrt();
        Self([r * az.cos(), r * az.sin(), up])
    }

    pub fn components(&self) -> [f64; 3] {
        self.0
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::from(self.0)
    }
}

/// Satellite directions together with the `S×4` design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    units: Vec<UnitVector3>,
    design: Vec<Vector4<f64>>,
}

impl Geometry {
    pub fn from_units(units: Vec<UnitVector3>) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::InvalidInput("geometry needs at least one satellite".into()));
        }
        let design = units
            .iter()
            .map(|u| {
                let [a, b, c] = u.components();
                Vector4::new(-a, -b, -c, 1.0)
            })
            .collect();
        Ok(Self { units, design })
    }

    pub fn sat_count(&self) -> usize {
        self.units.len()
    }

    pub fn units(&self) -> &[UnitVector3] {
        &self.units
    }

    /// Rows `g_s` of the design matrix.
    pub fn rows(&self) -> &[Vector4<f64>] {
        &self.design
    }

    /// `G·w` for a parameter vector in `(x₁, x₂, x₃, b)` order.
    pub fn apply(&self, w: &Vector4<f64>) -> Vec<f64> {
        self.design.iter().map(|g| g.dot(w)).collect()
    }

    /// `Gᵀ·r` for an `S`-vector.
    pub fn apply_transpose(&self, r: &[f64]) -> Vector4<f64> {
        debug_assert_eq!(r.len(), self.design.len());
        self.design
            .iter()
            .zip(r)
            .fold(Vector4::zeros(), |acc, (g, &ri)| acc + g * ri)
    }

    /// Returns a copy with the satellites reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let units = perm
            .iter()
            .map(|&i| {
                self.units
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::InvalidInput(format!("index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_units(units)
    }
}

/// Draws `sat_count` i.i.d. directions uniform on the upper hemisphere.
///
/// The elevation cosine of a uniform point on the hemisphere is itself
/// uniform on `[0, 1]` (Archimedes' hat-box theorem), so it is sampled
/// directly together with a uniform azimuth.
pub fn sample_hemisphere<R: Rng + ?Sized>(rng: &mut R, sat_count: usize) -> Result<Geometry> {
    if sat_count == 0 {
        return Err(Error::InvalidInput("sat_count must be at least 1".into()));
    }
    let units = (0..sat_count)
        .map(|_| {
            let up: f64 = rng.random();
            let az: f64 = rng.random::<f64>() * TAU;
            UnitVector3::from_up_azimuth(up, az)
        })
        .collect();
    Geometry::from_units(units)
}

/// `GᵀG = Σ_s g_s g_sᵀ`.
pub fn normal_matrix(g: &Geometry) -> Matrix4<f64> {
    let mut n = Matrix4::zeros();
    for row in g.rows() {
        n.ger(1.0, row, row, 1.0);
    }
    n
}

/// Spectral condition number of a symmetric matrix; infinite when singular.
pub fn condition_number(n: &Matrix4<f64>) -> f64 {
    let ev = n.symmetric_eigenvalues();
    let max = ev.iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
    let min = ev.iter().fold(f64::INFINITY, |a, &x| a.min(x.abs()));
    if min == 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// LU factorisation of `GᵀG` for repeated least-squares solves.
#[derive(Debug, Clone)]
pub struct NormalSolver {
    normal: Matrix4<f64>,
    lu: LU<f64, U4, U4>,
}

impl NormalSolver {
    /// Factorises the normal matrix of `g`, rejecting degenerate geometries.
    pub fn new(g: &Geometry) -> Result<Self> {
        Self::from_normal(normal_matrix(g), g.sat_count())
    }

    pub fn from_normal(normal: Matrix4<f64>, sat_count: usize) -> Result<Self> {
        let condition = condition_number(&normal);
        if sat_count < 4 || !(condition <= MAX_CONDITION) {
            return Err(Error::SingularGeometry { sat_count, condition });
        }
        let lu = normal.lu();
        Ok(Self { normal, lu })
    }

    pub fn normal(&self) -> &Matrix4<f64> {
        &self.normal
    }

    /// Solves `GᵀG x = b`.
    pub fn solve(&self, b: &Vector4<f64>) -> Vector4<f64> {
        self.lu.solve(b).unwrap_or_else(Vector4::zeros)
    }

    /// `(GᵀG)⁻¹`.
    pub fn inverse(&self) -> Matrix4<f64> {
        self.lu.try_inverse().unwrap_or_else(Matrix4::zeros)
    }

    /// Least-squares fit `(GᵀG)⁻¹Gᵀr`.
    pub fn fit(&self, g: &Geometry, r: &[f64]) -> Vector4<f64> {
        self.solve(&g.apply_transpose(r))
    }
}

/// Geometric dilution of precision `√tr((GᵀG)⁻¹)`.
pub fn dop(g: &Geometry) -> Result<f64> {
    dop_of_normal(&normal_matrix(g), g.sat_count())
}

/// DOP from an already assembled normal matrix.
pub fn dop_of_normal(normal: &Matrix4<f64>, sat_count: usize) -> Result<f64> {
    let solver = NormalSolver::from_normal(*normal, sat_count)?;
    Ok(solver.inverse().trace().sqrt())
}
