//! Noise model and synthetic pseudo-range / carrier-phase measurements.

use nalgebra::{Vector3, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::Geometry;

/// Stochastic model parameters shared by every estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Pseudo-range noise standard deviation, meters.
    pub sigma: f64,
    /// Carrier-phase noise standard deviation, meters.
    pub sigma_cp: f64,
    /// Carrier wavelength, meters.
    pub wavelength: f64,
    /// Ambiguities are uniform on `{−M, …, M}`.
    pub ambiguity_bound: u32,
}

impl NoiseModel {
    pub fn new(sigma: f64, sigma_cp: f64, wavelength: f64, ambiguity_bound: u32) -> Result<Self> {
        let nm = Self { sigma, sigma_cp, wavelength, ambiguity_bound };
        nm.validate()?;
        Ok(nm)
    }

    /// Builds the model from the wavelength-to-carrier-noise ratio `λ/σ̃`.
    pub fn from_ratio(sigma: f64, wavelength: f64, ratio: f64, ambiguity_bound: u32) -> Result<Self> {
        if !(ratio > 0.0) || !ratio.is_finite() {
            return Err(Error::InvalidInput(format!("ratio must be positive, got {ratio}")));
        }
        Self::new(sigma, wavelength / ratio, wavelength, ambiguity_bound)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma > 0.0
            && self.sigma.is_finite()
            && self.sigma_cp > 0.0
            && self.sigma_cp.is_finite()
            && self.wavelength >= 0.0
            && self.wavelength.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid noise model {self:?}")))
        }
    }

    /// `λ/σ̃`.
    pub fn ratio(&self) -> f64 {
        self.wavelength / self.sigma_cp
    }

    pub fn with_bound(mut self, ambiguity_bound: u32) -> Self {
        self.ambiguity_bound = ambiguity_bound;
        self
    }

    pub fn with_wavelength(mut self, wavelength: f64) -> Self {
        self.wavelength = wavelength;
        self
    }

    /// Weights `(α, β)` of the pseudo-range / carrier convex combination.
    pub fn combination_weights(&self) -> (f64, f64) {
        let p = self.sigma.powi(-2);
        let c = self.sigma_cp.powi(-2);
        (p / (p + c), c / (p + c))
    }

    /// `σ⁻² + σ̃⁻²`, the per-satellite information with known ambiguities.
    pub fn known_ambiguity_information(&self) -> f64 {
        self.sigma.powi(-2) + self.sigma_cp.powi(-2)
    }
}

impl Default for NoiseModel {
    /// σ = 1 m, λ = 0.19 m (GPS L1), λ/σ̃ = 4, M = 20.
    fn default() -> Self {
        Self { sigma: 1.0, sigma_cp: 0.19 / 4.0, wavelength: 0.19, ambiguity_bound: 20 }
    }
}

/// Receiver position error and clock bias, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ParameterVector {
    pub position: [f64; 3],
    pub clock_bias: f64,
}

impl ParameterVector {
    pub fn new(position: [f64; 3], clock_bias: f64) -> Self {
        Self { position, clock_bias }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        let [a, b, c] = self.position;
        Vector4::new(a, b, c, self.clock_bias)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self { position: [v[0], v[1], v[2]], clock_bias: v[3] }
    }

    pub fn position_vector(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|x| x.is_finite()) && self.clock_bias.is_finite()
    }
}

/// Raw random draws behind one measurement set.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraws {
    pub z: Vec<f64>,
    pub z_cp: Vec<f64>,
    pub ambiguities: Vec<i64>,
}

impl NoiseDraws {
    /// Draws per satellite, in order: `z`, `z̃`, then the ambiguity.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, sat_count: usize, nm: &NoiseModel) -> Self {
        let mut z = Vec::with_capacity(sat_count);
        let mut z_cp = Vec::with_capacity(sat_count);
        let mut ambiguities = Vec::with_capacity(sat_count);
        let bound = nm.ambiguity_bound as i64;
        for _ in 0..sat_count {
            z.push(rng.sample::<f64, _>(StandardNormal));
            z_cp.push(rng.sample::<f64, _>(StandardNormal));
            ambiguities.push(rng.random_range(-bound..=bound));
        }
        Self { z, z_cp, ambiguities }
    }

    /// Test hook: the given ambiguities with all receiver noise set to zero.
    pub fn noiseless(ambiguities: Vec<i64>) -> Self {
        let n = ambiguities.len();
        Self { z: vec![0.0; n], z_cp: vec![0.0; n], ambiguities }
    }

    /// Keeps the ambiguities, zeroes the receiver noise.
    pub fn without_receiver_noise(mut self) -> Self {
        self.z.iter_mut().for_each(|x| *x = 0.0);
        self.z_cp.iter_mut().for_each(|x| *x = 0.0);
        self
    }
}

/// One epoch of measurements plus the simulation truth that produced it.
///
/// Only the genie estimator and the harness may read the truth fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub pseudo: Vec<f64>,
    pub carrier: Vec<f64>,
    pub ambiguities: Vec<i64>,
    pub truth: ParameterVector,
    pub z: Vec<f64>,
    pub z_cp: Vec<f64>,
}

impl MeasurementSet {
    /// `y = Gw + σz`, `ỹ = Gw + λm + σ̃z̃`.
    pub fn assemble(g: &Geometry, w: &ParameterVector, nm: &NoiseModel, draws: NoiseDraws) -> Result<Self> {
        let s = g.sat_count();
        if draws.z.len() != s || draws.z_cp.len() != s || draws.ambiguities.len() != s {
            return Err(Error::InvalidInput(format!("noise draws do not match {s} satellites")));
        }
        let bound = nm.ambiguity_bound as i64;
        if draws.ambiguities.iter().any(|m| m.abs() > bound) {
            return Err(Error::InvalidInput(format!("ambiguity outside ±{bound}")));
        }
        let range = g.apply(&w.to_vector());
        let pseudo = range.iter().zip(&draws.z).map(|(r, z)| r + nm.sigma * z).collect();
        let carrier = range
            .iter()
            .zip(&draws.ambiguities)
            .zip(&draws.z_cp)
            .map(|((r, &m), zc)| r + nm.wavelength * m as f64 + nm.sigma_cp * zc)
            .collect();
        Ok(Self {
            pseudo,
            carrier,
            ambiguities: draws.ambiguities,
            truth: *w,
            z: draws.z,
            z_cp: draws.z_cp,
        })
    }

    pub fn sat_count(&self) -> usize {
        self.pseudo.len()
    }
}

/// Draws fresh noise and ambiguities and assembles the measurements.
pub fn synthesize<R: Rng + ?Sized>(
    rng: &mut R,
    g: &Geometry,
    w: &ParameterVector,
    nm: &NoiseModel,
) -> MeasurementSet {
    let draws = NoiseDraws::sample(rng, g.sat_count(), nm);
    MeasurementSet::assemble(g, w, nm, draws).expect("draws sized to geometry")
}

/// Density of `λm + σ̃z̃` with `m` uniform on `{−M, …, M}`.
pub fn combined_noise_pdf(v: f64, nm: &NoiseModel) -> f64 {
    let bound = nm.ambiguity_bound as i64;
    let norm = 1.0 / (nm.sigma_cp * (2.0 * PI).sqrt());
    let sum: f64 = (-bound..=bound)
        .map(|m| {
            let t = (v - nm.wavelength * m as f64) / nm.sigma_cp;
            (-0.5 * t * t).exp()
        })
        .sum();
    norm * sum / (2 * bound + 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_hemisphere;
    use crate::rng::substream;

    fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn zero_bound_gives_zero_ambiguities() {
        let nm = NoiseModel::default().with_bound(0);
        let mut rng = substream(1, &[0]);
        let g = sample_hemisphere(&mut rng, 30).unwrap();
        let ms = synthesize(&mut rng, &g, &ParameterVector::zero(), &nm);
        assert!(ms.ambiguities.iter().all(|&m| m == 0));
    }

    #[test]
    fn noiseless_zero_parameters_give_zero_measurements() {
        let nm = NoiseModel::default().with_bound(0);
        let mut rng = substream(2, &[0]);
        let g = sample_hemisphere(&mut rng, 10).unwrap();
        let ms = MeasurementSet::assemble(&g, &ParameterVector::zero(), &nm, NoiseDraws::noiseless(vec![0; 10]))
            .unwrap();
        assert!(ms.pseudo.iter().chain(&ms.carrier).all(|&x| x == 0.0));
    }

    #[test]
    fn reconstruction_is_exact() {
        let nm = NoiseModel::default();
        let mut rng = substream(3, &[0]);
        let g = sample_hemisphere(&mut rng, 40).unwrap();
        let w = ParameterVector::new([1.0, -2.0, 0.5], 7.0);
        let ms = synthesize(&mut rng, &g, &w, &nm);
        let gw = g.apply(&w.to_vector());
        for s in 0..40 {
            assert!((ms.pseudo[s] - gw[s] - nm.sigma * ms.z[s]).abs() < 1e-12);
            let r = ms.carrier[s] - gw[s] - nm.wavelength * ms.ambiguities[s] as f64 - nm.sigma_cp * ms.z_cp[s];
            assert!(r.abs() < 1e-12);
            assert!(ms.ambiguities[s].abs() <= 20);
        }
    }

    #[test]
    fn pseudo_range_noise_variance() {
        let nm = NoiseModel::new(1.7, 0.05, 0.19, 5).unwrap();
        let mut rng = substream(4, &[0]);
        let g = sample_hemisphere(&mut rng, 100).unwrap();
        let w = ParameterVector::new([0.3, 0.2, -0.1], 1.0);
        let gw = g.apply(&w.to_vector());
        let mut res = Vec::with_capacity(100_000);
        for _ in 0..1000 {
            let ms = synthesize(&mut rng, &g, &w, &nm);
            res.extend(ms.pseudo.iter().zip(&gw).map(|(y, r)| y - r));
        }
        let n = res.len() as f64;
        let var = res.iter().map(|x| x * x).sum::<f64>() / n;
        // Var of the sample variance of a normal is 2σ⁴/n.
        let se = (2.0 * nm.sigma.powi(4) / n).sqrt();
        assert!((var - nm.sigma.powi(2)).abs() < 3.0 * se, "var {var}");
    }

    #[test]
    fn mismatched_draws_rejected() {
        let nm = NoiseModel::default();
        let mut rng = substream(5, &[0]);
        let g = sample_hemisphere(&mut rng, 4).unwrap();
        assert!(MeasurementSet::assemble(&g, &ParameterVector::zero(), &nm, NoiseDraws::noiseless(vec![0; 3])).is_err());
        assert!(MeasurementSet::assemble(&g, &ParameterVector::zero(), &nm, NoiseDraws::noiseless(vec![0, 0, 0, 21])).is_err());
    }

    #[test]
    fn json_field_names() {
        let nm = NoiseModel::default();
        let mut rng = substream(6, &[0]);
        let g = sample_hemisphere(&mut rng, 4).unwrap();
        let ms = synthesize(&mut rng, &g, &ParameterVector::zero(), &nm);
        let v: serde_json::Value = serde_json::to_value(&ms).unwrap();
        for key in ["pseudo", "carrier", "ambiguities", "truth", "z", "z_cp"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: MeasurementSet = serde_json::from_value(v).unwrap();
        assert_eq!(back, ms);
    }

    #[test]
    fn pdf_without_ambiguity_is_normal() {
        let nm = NoiseModel::new(1.0, 0.05, 0.19, 0).unwrap();
        for v in [-0.2, -0.01, 0.0, 0.03, 0.11] {
            let phi = (-0.5 * (v / 0.05_f64).powi(2)).exp() / (0.05 * (2.0 * PI).sqrt());
            assert!((combined_noise_pdf(v, &nm) - phi).abs() < 1e-12 * phi.max(1.0));
        }
    }

    #[test]
    fn pdf_normalised_and_symmetric() {
        for (ratio, m) in [(2.0, 3), (4.0, 3), (8.0, 3), (8.0, 20), (0.5, 1)] {
            let nm = NoiseModel::from_ratio(1.0, 0.19, ratio, m).unwrap();
            let half = nm.wavelength * m as f64 + 8.0 * nm.sigma_cp;
            let area = simpson(|v| combined_noise_pdf(v, &nm), -half, half, 200_000);
            assert!((area - 1.0).abs() < 1e-6, "ratio {ratio} M {m}: {area}");
            for k in [0.1, 0.5, 1.0] {
                let v = k * nm.wavelength;
                assert!((combined_noise_pdf(v, &nm) - combined_noise_pdf(-v, &nm)).abs() < 1e-12);
            }
        }
    }
}
