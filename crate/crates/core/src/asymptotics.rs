//! Large-constellation limits: the `Q` matrix, resolution success
//! probability, the information-retention function `h_M`, and predicted
//! asymptotic covariances.

use nalgebra::Matrix4;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::SQRT_2;

use crate::ambiguity::posterior;
use crate::error::{Error, Result};
use crate::estimators::Method;
use crate::measurement::NoiseModel;
use crate::parallel::map_indexed;
use crate::rng::{substream, tag, Stream};

/// Samples per independently seeded Monte Carlo chunk.
pub const CHUNK: usize = 8192;

/// Minimum sample count accepted by the Monte Carlo estimators.
pub const MIN_SAMPLES: usize = 1000;

/// Limit of `S·(GᵀG)⁻¹` under the uniform-hemisphere model.
pub fn q_matrix() -> Matrix4<f64> {
    Matrix4::new(
        3.0, 0.0, 0.0, 0.0, //
        0.0, 3.0, 0.0, 0.0, //
        0.0, 0.0, 12.0, 6.0, //
        0.0, 0.0, 6.0, 4.0,
    )
}

/// Limit of `GᵀG/S`, i.e. `E[g gᵀ]` for one random satellite.
pub fn q_inverse() -> Matrix4<f64> {
    Matrix4::new(
        1.0 / 3.0, 0.0, 0.0, 0.0, //
        0.0, 1.0 / 3.0, 0.0, 0.0, //
        0.0, 0.0, 1.0 / 3.0, -0.5, //
        0.0, 0.0, -0.5, 1.0,
    )
}

/// Limit of `√S·DOP`.
pub fn dop_limit() -> f64 {
    q_matrix().trace().sqrt()
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Probability that rounding resolves all `S` ambiguities correctly even
/// with the true position known: `(1 − 2Φ(−ratio/2))^S`.
pub fn pcorr(ratio: f64, sat_count: usize) -> Result<f64> {
    if !(ratio >= 0.0) || sat_count == 0 {
        return Err(Error::InvalidInput(format!("pcorr needs ratio ≥ 0 and S ≥ 1, got {ratio}, {sat_count}")));
    }
    let single = 1.0 - 2.0 * normal_cdf(-ratio / 2.0);
    Ok(single.powi(sat_count as i32))
}

/// Mean and standard error of a Monte Carlo average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct Running {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Running {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, other: Running) -> Running {
        if other.n == 0.0 {
            return self;
        }
        if self.n == 0.0 {
            return other;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        Running {
            n,
            mean: self.mean + d * other.n / n,
            m2: self.m2 + other.m2 + d * d * self.n * other.n / n,
        }
    }

    fn finish(self) -> McEstimate {
        let var = if self.n > 1.0 { self.m2 / (self.n - 1.0) } else { 0.0 };
        McEstimate { mean: self.mean, std_err: (var / self.n).sqrt(), n_samples: self.n as usize }
    }
}

/// Averages `K` sample statistics over `n` draws.
///
/// Draws are split into chunks of [`CHUNK`] samples, chunk `c` reading the
/// substream `(seed, [domain, c])`. Chunks are merged in index order, so the
/// result does not depend on the worker count.
pub fn monte_carlo<const K: usize, F>(n: usize, seed: u64, domain: u64, sample: F) -> [McEstimate; K]
where
    F: Fn(&mut Stream) -> [f64; K] + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let partials = map_indexed(chunks, |c| {
        let mut rng = substream(seed, &[domain, c as u64]);
        let count = CHUNK.min(n - c * CHUNK);
        let mut acc = [Running::default(); K];
        for _ in 0..count {
            let x = sample(&mut rng);
            for (a, xi) in acc.iter_mut().zip(x) {
                a.push(xi);
            }
        }
        acc
    });
    let total = partials.into_iter().fold([Running::default(); K], |mut tot, part| {
        for (t, p) in tot.iter_mut().zip(part) {
            *t = t.merge(p);
        }
        tot
    });
    total.map(Running::finish)
}

/// Draws `(m, z̃)` with `m` uniform on `{−M, …, M}` and `z̃ ~ N(0, 1)`.
pub fn draw_ambiguity_and_noise<R: Rng + ?Sized>(rng: &mut R, big_m: u32) -> (i64, f64) {
    let z: f64 = rng.sample(StandardNormal);
    let b = big_m as i64;
    (rng.random_range(-b..=b), z)
}

/// One point of the `h_M(λ/σ̃)` curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HCurvePoint {
    pub ratio: f64,
    pub big_m: u32,
    pub h_value: f64,
    pub std_err: f64,
    pub n_samples: usize,
}

fn check_samples(n: usize) -> Result<()> {
    if n < MIN_SAMPLES {
        return Err(Error::InvalidInput(format!("need at least {MIN_SAMPLES} samples, got {n}")));
    }
    Ok(())
}

/// Monte Carlo estimate of `h_M(a) = 1 − a²·E[H₂ − H₁²]`.
///
/// The brackets only depend on `λ/σ̃`, so they are evaluated with `λ = a`,
/// `σ̃ = 1` at residual `a·m + z̃`.
pub fn h_function(ratio: f64, big_m: u32, n_samples: usize, seed: u64) -> Result<HCurvePoint> {
    if !(ratio >= 0.0) || !ratio.is_finite() {
        return Err(Error::InvalidInput(format!("ratio must be finite and ≥ 0, got {ratio}")));
    }
    check_samples(n_samples)?;
    let unit = NoiseModel { sigma: 1.0, sigma_cp: 1.0, wavelength: ratio, ambiguity_bound: big_m };
    let [var] = monte_carlo(n_samples, seed, tag::H_CURVE, |rng| {
        let (m, z) = draw_ambiguity_and_noise(rng, big_m);
        [posterior(ratio * m as f64 + z, &unit).variance]
    });
    let a2 = ratio * ratio;
    Ok(HCurvePoint {
        ratio,
        big_m,
        h_value: 1.0 - a2 * var.mean,
        std_err: a2 * var.std_err,
        n_samples,
    })
}

/// Per-satellite Fisher information factor `σ⁻² + σ̃⁻²·h_M(λ/σ̃)`, computed
/// in physical units as `σ⁻² + σ̃⁻² − (λ²/σ̃⁴)·E[Var(m | λm + σ̃z̃)]`.
///
/// Reads the same draws as [`h_function`] for equal `seed`.
pub fn fisher_factor(nm: &NoiseModel, n_samples: usize, seed: u64) -> Result<McEstimate> {
    nm.validate()?;
    check_samples(n_samples)?;
    let ic = nm.sigma_cp.powi(-2);
    let scale = nm.wavelength * nm.wavelength * ic * ic;
    let base = nm.sigma.powi(-2) + ic;
    let [var] = monte_carlo(n_samples, seed, tag::H_CURVE, |rng| {
        let (m, z) = draw_ambiguity_and_noise(rng, nm.ambiguity_bound);
        [posterior(nm.wavelength * m as f64 + nm.sigma_cp * z, nm).variance]
    });
    Ok(McEstimate { mean: base - scale * var.mean, std_err: scale * var.std_err, n_samples })
}

/// Both sides of the Gaussian integration-by-parts identity
/// `E[z̃·⟨m⟩_v] = (λ/σ̃)·E[⟨m²⟩_v − ⟨m⟩_v²]` at `v = λm + σ̃z̃`, plus their
/// paired difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteinCheck {
    pub lhs: McEstimate,
    pub rhs: McEstimate,
    pub difference: McEstimate,
}

pub fn stein_identity_check(nm: &NoiseModel, n_samples: usize, seed: u64) -> Result<SteinCheck> {
    nm.validate()?;
    check_samples(n_samples)?;
    let ratio = nm.ratio();
    let [lhs, rhs, difference] = monte_carlo(n_samples, seed, tag::STEIN, |rng| {
        let (m, z) = draw_ambiguity_and_noise(rng, nm.ambiguity_bound);
        let p = posterior(nm.wavelength * m as f64 + nm.sigma_cp * z, nm);
        let l = z * p.mean;
        let r = ratio * p.variance;
        [l, r, l - r]
    });
    Ok(SteinCheck { lhs, rhs, difference })
}

/// Predicted limit of the covariance of `√S(ŵ − w)`.
pub fn predicted_covariance(method: Method, nm: &NoiseModel, h_value: Option<f64>) -> Result<Matrix4<f64>> {
    let q = q_matrix();
    let ip = nm.sigma.powi(-2);
    let ic = nm.sigma_cp.powi(-2);
    match method {
        Method::PseudoRange => Ok(q / ip),
        Method::GenieCP => Ok(q / (ip + ic)),
        Method::BayesFixedPoint | Method::BayesMultiStart => {
            let h = h_value.ok_or(Error::MissingH)?;
            Ok(q / (ip + h * ic))
        }
        Method::StandardResolution => Err(Error::NoPrediction(method.name())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Φ(x) via the Taylor series of erf, summed to convergence.
    fn series_cdf(x: f64) -> f64 {
        let t = x / SQRT_2;
        let mut term = t;
        let mut sum = t;
        let mut n = 0;
        while term.abs() > 1e-18 * sum.abs().max(1e-300) && n < 500 {
            n += 1;
            term *= -t * t / n as f64;
            sum += term / (2 * n + 1) as f64;
        }
        0.5 * (1.0 + 2.0 / std::f64::consts::PI.sqrt() * sum)
    }

    #[test]
    fn q_invariants() {
        let q = q_matrix();
        assert_eq!(q.trace(), 22.0);
        assert!((q * q_inverse() - Matrix4::identity()).amax() < 1e-15);
        assert!((q.try_inverse().unwrap() - q_inverse()).amax() < 1e-14);
        assert!((dop_limit() - 22f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn normal_cdf_against_series() {
        for x in [-1.0, -0.3, 0.0, 0.7, 1.0] {
            assert!((normal_cdf(x) - series_cdf(x)).abs() < 1e-14, "x {x}");
        }
        // 30-digit reference values.
        let reference = [
            (-3.0, 0.001_349_898_031_630_094_526_6),
            (-2.0, 0.022_750_131_948_179_207_200),
            (-1.0, 0.158_655_253_931_457_051_41),
            (1.5, 0.933_192_798_731_141_933_99),
            (2.5, 0.993_790_334_674_223_864_83),
        ];
        for (x, p) in reference {
            assert!((normal_cdf(x) - p).abs() <= 1e-15 * p, "x {x}");
        }
    }

    #[test]
    fn pcorr_endpoints() {
        assert!(pcorr(100.0, 50).unwrap() >= 1.0 - 1e-12);
        assert_eq!(pcorr(0.0, 1).unwrap(), 0.0);
        assert_eq!(pcorr(0.0, 80).unwrap(), 0.0);
        let oracle = (1.0 - 2.0 * series_cdf(-2.0)).powi(50);
        let p = pcorr(4.0, 50).unwrap();
        assert!((p - oracle).abs() < 1e-12);
        assert!((p - 0.097_451_972_252_920_368).abs() < 1e-14);
        assert!((p - 0.0975).abs() < 1e-4 && p < 0.10);
        assert!(pcorr(-1.0, 5).is_err());
        assert!(pcorr(1.0, 0).is_err());
    }

    #[test]
    fn pcorr_monotone() {
        for s in 1..100 {
            assert!(pcorr(3.0, s + 1).unwrap() < pcorr(3.0, s).unwrap());
        }
        for i in 1..40 {
            let r = i as f64 * 0.25;
            assert!(pcorr(r + 0.25, 30).unwrap() > pcorr(r, 30).unwrap());
        }
    }

    #[test]
    fn h_exact_endpoints() {
        let p = h_function(0.0, 20, 2000, 1).unwrap();
        assert_eq!(p.h_value, 1.0);
        assert_eq!(p.std_err, 0.0);
        let p = h_function(3.0, 0, 2000, 1).unwrap();
        assert_eq!(p.h_value, 1.0);
        assert!(h_function(3.0, 20, 999, 1).is_err());
    }

    #[test]
    fn h_within_range() {
        for ratio in [0.5, 1.0, 2.0, 4.0, 6.0] {
            let p = h_function(ratio, 20, 20_000, 2).unwrap();
            assert!(p.h_value >= -3.0 * p.std_err && p.h_value <= 1.0 + 3.0 * p.std_err, "{p:?}");
        }
    }

    #[test]
    fn fisher_factor_degenerate_cases() {
        let nm = NoiseModel::new(1.3, 0.04, 0.19, 0).unwrap();
        let f = fisher_factor(&nm, 2000, 3).unwrap();
        assert_eq!(f.mean, nm.known_ambiguity_information());
        let nm = NoiseModel::new(1.3, 0.04, 0.0, 20).unwrap();
        let f = fisher_factor(&nm, 2000, 3).unwrap();
        assert_eq!(f.mean, nm.known_ambiguity_information());
    }

    #[test]
    fn fisher_factor_pairs_with_h() {
        let nm = NoiseModel::from_ratio(1.0, 0.19, 4.0, 20).unwrap();
        let f = fisher_factor(&nm, 50_000, 11).unwrap();
        let h = h_function(4.0, 20, 50_000, 11).unwrap();
        let via_h = nm.sigma.powi(-2) + nm.sigma_cp.powi(-2) * h.h_value;
        assert!((f.mean - via_h).abs() <= 1e-12 * via_h, "{} vs {via_h}", f.mean);
    }

    #[test]
    fn predicted_covariances() {
        let nm = NoiseModel::new(1.0, 0.05, 0.19, 20).unwrap();
        assert_eq!(predicted_covariance(Method::PseudoRange, &nm, None).unwrap(), q_matrix());
        let genie = predicted_covariance(Method::GenieCP, &nm, None).unwrap();
        let one = predicted_covariance(Method::BayesMultiStart, &nm, Some(1.0)).unwrap();
        assert!((genie - one).amax() < 1e-15);
        let zero = predicted_covariance(Method::BayesFixedPoint, &nm, Some(0.0)).unwrap();
        assert!((zero - q_matrix()).amax() < 1e-15);
        assert_eq!(predicted_covariance(Method::BayesMultiStart, &nm, None), Err(Error::MissingH));
        assert!(predicted_covariance(Method::StandardResolution, &nm, None).is_err());
    }

    #[test]
    fn monte_carlo_is_chunking_invariant_in_value() {
        let a = monte_carlo(20_000, 5, 99, |rng| [rng.random::<f64>()]);
        let b = monte_carlo(20_000, 5, 99, |rng| [rng.random::<f64>()]);
        assert_eq!(a, b);
        assert!((a[0].mean - 0.5).abs() < 4.0 * a[0].std_err);
    }
}
