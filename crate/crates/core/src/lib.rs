//! Satellite positioning with large constellations.
//!
//! Simulates random constellation geometries and GNSS measurements, and
//! implements pseudo-range least squares, a known-ambiguity (genie)
//! carrier-phase estimator, a rounding-based ambiguity-resolution baseline,
//! and the Bayesian carrier-phase maximum-likelihood estimator that treats
//! integer ambiguities as noise. The [`asymptotics`] module evaluates the
//! large-`S` limits these estimators approach and [`harness`] runs the
//! Monte Carlo experiments.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ambiguity;
pub mod asymptotics;
pub mod error;
pub mod estimators;
pub mod geometry;
pub mod harness;
pub mod measurement;
pub mod parallel;
pub mod rng;

pub use error::{Error, Result};
pub use geometry::Geometry;
pub use measurement::{MeasurementSet, NoiseModel, ParameterVector};
