//! Log-likelihood of `(y, ỹ)` with the ambiguities marginalised out, and its
//! first three derivatives.
//!
//! The additive constant `log C` (normalisation, geometry density) does not
//! depend on `w` and is omitted, so only differences of values are
//! meaningful.

use nalgebra::{Matrix4, Vector4};

use crate::ambiguity::{log_marginal, posterior};
use crate::geometry::Geometry;
use crate::measurement::NoiseModel;

/// Value, gradient and Hessian at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalModel {
    pub value: f64,
    pub gradient: Vector4<f64>,
    pub hessian: Matrix4<f64>,
}

/// Binds the observations so the likelihood can be evaluated repeatedly.
#[derive(Debug, Clone, Copy)]
pub struct Likelihood<'a> {
    g: &'a Geometry,
    pseudo: &'a [f64],
    carrier: &'a [f64],
    nm: &'a NoiseModel,
}

impl<'a> Likelihood<'a> {
    pub fn new(g: &'a Geometry, pseudo: &'a [f64], carrier: &'a [f64], nm: &'a NoiseModel) -> Self {
        assert_eq!(pseudo.len(), g.sat_count(), "pseudo-range count");
        assert_eq!(carrier.len(), g.sat_count(), "carrier count");
        Self { g, pseudo, carrier, nm }
    }

    pub fn geometry(&self) -> &'a Geometry {
        self.g
    }

    pub fn noise(&self) -> &'a NoiseModel {
        self.nm
    }

    fn sats(&self) -> impl Iterator<Item = (&'a Vector4<f64>, f64, f64)> + 'a {
        self.g
            .rows()
            .iter()
            .zip(self.pseudo.iter().zip(self.carrier))
            .map(|(g, (&y, &yc))| (g, y, yc))
    }

    /// `Σ_s ℓ(y_s, ỹ_s, g_s; w)`.
    pub fn value(&self, w: &Vector4<f64>) -> f64 {
        let inv_two_var = 0.5 / (self.nm.sigma * self.nm.sigma);
        self.sats()
            .map(|(g, y, yc)| {
                let gw = g.dot(w);
                let r = y - gw;
                -r * r * inv_two_var + log_marginal(yc - gw, self.nm)
            })
            .sum()
    }

    pub fn gradient(&self, w: &Vector4<f64>) -> Vector4<f64> {
        let ip = 1.0 / (self.nm.sigma * self.nm.sigma);
        let ic = 1.0 / (self.nm.sigma_cp * self.nm.sigma_cp);
        let lambda = self.nm.wavelength;
        self.sats().fold(Vector4::zeros(), |acc, (g, y, yc)| {
            let gw = g.dot(w);
            let v = yc - gw;
            let p = posterior(v, self.nm);
            acc + g * ((y - gw) * ip + v * ic - lambda * ic * p.mean)
        })
    }

    pub fn hessian(&self, w: &Vector4<f64>) -> Matrix4<f64> {
        self.evaluate(w).hessian
    }

    /// Value, gradient and Hessian in a single pass over the satellites.
    pub fn evaluate(&self, w: &Vector4<f64>) -> LocalModel {
        let ip = 1.0 / (self.nm.sigma * self.nm.sigma);
        let ic = 1.0 / (self.nm.sigma_cp * self.nm.sigma_cp);
        let lambda = self.nm.wavelength;
        let curvature = lambda * lambda * ic * ic;
        let mut value = 0.0;
        let mut gradient = Vector4::zeros();
        let mut hessian = Matrix4::zeros();
        for (g, y, yc) in self.sats() {
            let gw = g.dot(w);
            let r = y - gw;
            let v = yc - gw;
            let p = posterior(v, self.nm);
            value += -0.5 * r * r * ip + p.log_norm;
            gradient += g * (r * ip + v * ic - lambda * ic * p.mean);
            hessian += (g * g.transpose()) * (-ip - ic + curvature * p.variance);
        }
        LocalModel { value, gradient, hessian }
    }
}

pub fn log_likelihood(g: &Geometry, pseudo: &[f64], carrier: &[f64], w: &Vector4<f64>, nm: &NoiseModel) -> f64 {
    Likelihood::new(g, pseudo, carrier, nm).value(w)
}

pub fn analytic_gradient(
    g: &Geometry,
    pseudo: &[f64],
    carrier: &[f64],
    w: &Vector4<f64>,
    nm: &NoiseModel,
) -> Vector4<f64> {
    Likelihood::new(g, pseudo, carrier, nm).gradient(w)
}

pub fn analytic_hessian(
    g: &Geometry,
    pseudo: &[f64],
    carrier: &[f64],
    w: &Vector4<f64>,
    nm: &NoiseModel,
) -> Matrix4<f64> {
    Likelihood::new(g, pseudo, carrier, nm).hessian(w)
}

/// Per-satellite gradient summand `∂ℓ/∂w` for one observation.
pub fn gradient_summand(g: &Vector4<f64>, y: f64, yc: f64, w: &Vector4<f64>, nm: &NoiseModel) -> Vector4<f64> {
    let ip = 1.0 / (nm.sigma * nm.sigma);
    let ic = 1.0 / (nm.sigma_cp * nm.sigma_cp);
    let gw = g.dot(w);
    let v = yc - gw;
    g * ((y - gw) * ip + v * ic - nm.wavelength * ic * posterior(v, nm).mean)
}

/// `∂³ℓ/∂w_i∂w_j∂w_k` of one summand at carrier residual `v`:
/// `−g_i g_j g_k (λ³/σ̃⁶) κ₃(v)` with `κ₃` the posterior third central moment.
pub fn third_derivative_summand(g: &Vector4<f64>, v: f64, nm: &NoiseModel, i: usize, j: usize, k: usize) -> f64 {
    let scale = (nm.wavelength / (nm.sigma_cp * nm.sigma_cp)).powi(3);
    -g[i] * g[j] * g[k] * scale * posterior(v, nm).third_central
}

/// Uniform bound `6M³λ³/σ̃⁶` on every third partial derivative of a summand.
pub fn third_derivative_bound_check(nm: &NoiseModel) -> f64 {
    let m = nm.ambiguity_bound as f64;
    6.0 * m.powi(3) * nm.wavelength.powi(3) / nm.sigma_cp.powi(6)
}
