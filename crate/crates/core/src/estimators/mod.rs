//! Position and clock-bias estimators.

mod bayes;
mod likelihood;

pub use bayes::{bayes_fixed_point, bayes_multistart, local_ascent, AscentResult};
pub use likelihood::{
    analytic_gradient, analytic_hessian, gradient_summand, log_likelihood, third_derivative_bound_check,
    third_derivative_summand, Likelihood, LocalModel,
};

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::geometry::{Geometry, NormalSolver};
use crate::measurement::{MeasurementSet, NoiseModel, ParameterVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    PseudoRange,
    GenieCP,
    BayesFixedPoint,
    BayesMultiStart,
    StandardResolution,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::PseudoRange => "PseudoRange",
            Method::GenieCP => "GenieCP",
            Method::BayesFixedPoint => "BayesFixedPoint",
            Method::BayesMultiStart => "BayesMultiStart",
            Method::StandardResolution => "StandardResolution",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An estimate together with solver diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimate: ParameterVector,
    pub method: Method,
    /// Sum of per-satellite log-likelihood summands (constant dropped).
    /// For [`pr_ls`], which never sees carrier data, this is the
    /// unit-variance pseudo-range term `−½‖y − Gŵ‖²`.
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub starts_evaluated: usize,
    pub resolved_ambiguities: Option<Vec<i64>>,
}

/// Tuning for the iterative Bayesian estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Fixed-point stopping threshold on the undamped residual, meters.
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    /// Initial blend factor; halved whenever the iteration oscillates.
    pub fp_damping: f64,
    pub n_starts: usize,
    /// Multi-start spread in units of the pseudo-range standard deviation.
    pub start_radius_scale: f64,
    pub local_ascent_tol: f64,
    pub local_max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            fp_tol: 1e-9,
            fp_max_iter: 500,
            fp_damping: 1.0,
            n_starts: 200,
            start_radius_scale: 3.0,
            local_ascent_tol: 1e-10,
            local_max_iter: 100,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fp_tol > 0.0
            && self.fp_max_iter > 0
            && self.fp_damping > 0.0
            && self.fp_damping <= 1.0
            && self.n_starts > 0
            && self.start_radius_scale > 0.0
            && self.local_ascent_tol > 0.0
            && self.local_max_iter > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid solver config {self:?}")))
        }
    }
}

fn check_len(g: &Geometry, v: &[f64], what: &str) -> Result<()> {
    if v.len() != g.sat_count() {
        return Err(Error::InvalidInput(format!(
            "{what} has {} entries, geometry has {} satellites",
            v.len(),
            g.sat_count()
        )));
    }
    Ok(())
}

/// Least-squares fit of `α y + β (ỹ − λ m)`; `m` may be real-valued.
pub(crate) fn combined_fit(
    solver: &NormalSolver,
    g: &Geometry,
    pseudo: &[f64],
    carrier: &[f64],
    ambiguities: impl Iterator<Item = f64>,
    nm: &NoiseModel,
) -> Vector4<f64> {
    let (alpha, beta) = nm.combination_weights();
    let rhs: Vec<f64> = pseudo
        .iter()
        .zip(carrier)
        .zip(ambiguities)
        .map(|((y, yc), m)| alpha * y + beta * (yc - nm.wavelength * m))
        .collect();
    solver.fit(g, &rhs)
}

fn report(estimate: Vector4<f64>, method: Method, log_likelihood: f64) -> EstimateReport {
    EstimateReport {
        estimate: ParameterVector::from_vector(&estimate),
        method,
        log_likelihood,
        iterations: 1,
        converged: true,
        starts_evaluated: 0,
        resolved_ambiguities: None,
    }
}

/// Pseudo-range maximum-likelihood estimate `(GᵀG)⁻¹Gᵀy`.
pub fn pr_ls(g: &Geometry, pseudo: &[f64]) -> Result<EstimateReport> {
    check_len(g, pseudo, "pseudo")?;
    let solver = NormalSolver::new(g)?;
    let w = solver.fit(g, pseudo);
    let rss: f64 = g.apply(&w).iter().zip(pseudo).map(|(a, b)| (b - a) * (b - a)).sum();
    Ok(report(w, Method::PseudoRange, -0.5 * rss))
}

/// Carrier-phase estimate with the true ambiguities supplied by a genie.
pub fn genie_cp(g: &Geometry, ms: &MeasurementSet, nm: &NoiseModel) -> Result<EstimateReport> {
    check_len(g, &ms.pseudo, "pseudo")?;
    check_len(g, &ms.carrier, "carrier")?;
    let solver = NormalSolver::new(g)?;
    let w = combined_fit(&solver, g, &ms.pseudo, &ms.carrier, ms.ambiguities.iter().map(|&m| m as f64), nm);
    let ll = log_likelihood(g, &ms.pseudo, &ms.carrier, &w, nm);
    Ok(report(w, Method::GenieCP, ll))
}

/// Float / fix / (skipped validation) / fixed-ambiguity baseline.
///
/// The float solution of the joint least-squares problem over `(w, m ∈ ℝ^S)`
/// is the pseudo-range estimate with `m̂ = (ỹ − Gŵ)/λ`, because the carrier
/// equations can be matched exactly for any `w`. The fixed ambiguities are
/// `m̂` rounded and clamped to `[−M, M]`; they are always accepted.
pub fn standard_resolution(
    g: &Geometry,
    pseudo: &[f64],
    carrier: &[f64],
    nm: &NoiseModel,
) -> Result<EstimateReport> {
    check_len(g, pseudo, "pseudo")?;
    check_len(g, carrier, "carrier")?;
    if nm.wavelength == 0.0 {
        return Err(Error::WavelengthZero);
    }
    let solver = NormalSolver::new(g)?;
    let float_w = solver.fit(g, pseudo);
    let bound = nm.ambiguity_bound as f64;
    let fixed: Vec<i64> = g
        .apply(&float_w)
        .iter()
        .zip(carrier)
        .map(|(gw, yc)| ((yc - gw) / nm.wavelength).round().clamp(-bound, bound) as i64)
        .collect();
    let w = combined_fit(&solver, g, pseudo, carrier, fixed.iter().map(|&m| m as f64), nm);
    let ll = log_likelihood(g, pseudo, carrier, &w, nm);
    let mut r = report(w, Method::StandardResolution, ll);
    r.resolved_ambiguities = Some(fixed);
    Ok(r)
}
