//! Posterior moments of an integer ambiguity given a carrier residual.
//!
//! For a residual `v = ỹ − gᵀw` the ambiguity posterior under the uniform
//! prior on `{−M, …, M}` has weights `f_v(m) = exp(−(λm − v)²/(2σ̃²))`.
//! The brackets `⟨m^k⟩_v` are the moments of that posterior.

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::measurement::NoiseModel;

/// Terms whose exponent trails the maximum by more than this are dropped;
/// their relative weight `e⁻⁴⁰ ≈ 4e−18` is below double precision.
const EXPONENT_WINDOW: f64 = 40.0;

/// Highest bracket order the likelihood derivatives need.
pub const MAX_ORDER: u32 = 3;

/// Moments of the ambiguity posterior at one residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    /// `log Σ_m f_v(m)`.
    pub log_norm: f64,
    /// `⟨m⟩_v`.
    pub mean: f64,
    /// `⟨m²⟩_v`.
    pub second: f64,
    /// `⟨m³⟩_v`.
    pub third: f64,
    /// `⟨m²⟩_v − ⟨m⟩_v²`, accumulated around the mode to avoid cancellation.
    pub variance: f64,
    /// `⟨m³⟩ − 3⟨m²⟩⟨m⟩ + 2⟨m⟩³`.
    pub third_central: f64,
}

impl Posterior {
    /// Raw moment `⟨m^k⟩_v` for `k ≤ 3`.
    pub fn raw(&self, k: u32) -> f64 {
        match k {
            0 => 1.0,
            1 => self.mean,
            2 => self.second,
            3 => self.third,
            _ => f64::NAN,
        }
    }
}

/// Evaluates the ambiguity posterior at residual `v`.
pub fn posterior(v: f64, nm: &NoiseModel) -> Posterior {
    let bound = nm.ambiguity_bound as i64;
    let lambda = nm.wavelength;
    let two_var = 2.0 * nm.sigma_cp * nm.sigma_cp;
    let base = -v * v / two_var;

    if bound == 0 {
        return Posterior { log_norm: base, mean: 0.0, second: 0.0, third: 0.0, variance: 0.0, third_central: 0.0 };
    }
    if lambda == 0.0 {
        // Flat posterior: moments of the uniform prior.
        let b = bound as f64;
        let second = b * (b + 1.0) / 3.0;
        return Posterior {
            log_norm: base + ((2 * bound + 1) as f64).ln(),
            mean: 0.0,
            second,
            third: 0.0,
            variance: second,
            third_central: 0.0,
        };
    }

    let win = Window::new(v, bound, lambda, two_var);
    let (e_min, mode_i) = (win.e_min, win.mode);
    let mode = mode_i as f64;

    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for m in win.lo..=win.hi {
        let w = win.weight(m);
        let d = (m - mode_i) as f64;
        s0 += w;
        s1 += w * d;
        s2 += w * d * d;
        s3 += w * d * d * d;
    }
    let d1 = s1 / s0;
    let d2 = s2 / s0;
    let d3 = s3 / s0;
    let variance = (d2 - d1 * d1).max(0.0);
    let third_central = d3 - 3.0 * d2 * d1 + 2.0 * d1 * d1 * d1;
    Posterior {
        log_norm: -e_min + s0.ln(),
        mean: mode + d1,
        second: mode * mode + 2.0 * mode * d1 + d2,
        third: mode * mode * mode + 3.0 * mode * mode * d1 + 3.0 * mode * d2 + d3,
        variance,
        third_central,
    }
}

/// `log Σ_m exp(−(λm − v)²/2σ̃²)`, the `log_norm` of [`posterior`] without
/// the moments.
pub fn log_marginal(v: f64, nm: &NoiseModel) -> f64 {
    let bound = nm.ambiguity_bound as i64;
    let lambda = nm.wavelength;
    let two_var = 2.0 * nm.sigma_cp * nm.sigma_cp;
    if bound == 0 || lambda == 0.0 {
        return posterior(v, nm).log_norm;
    }
    let win = Window::new(v, bound, lambda, two_var);
    let s0: f64 = (win.lo..=win.hi).map(|m| win.weight(m)).sum();
    -win.e_min + s0.ln()
}

/// Range of ambiguities whose weight is within the exponent window of the mode.
struct Window {
    v: f64,
    lambda: f64,
    two_var: f64,
    mode: i64,
    e_min: f64,
    lo: i64,
    hi: i64,
}

impl Window {
    fn new(v: f64, bound: i64, lambda: f64, two_var: f64) -> Self {
        let x = v / lambda;
        let mode = round_int(x).clamp(-bound, bound);
        let d = lambda * mode as f64 - v;
        let e_min = d * d / two_var;
        let reach = (two_var * (e_min + EXPONENT_WINDOW)).sqrt() / lambda;
        let lo = ceil_int(x - reach).clamp(-bound, bound).min(mode);
        let hi = floor_int(x + reach).clamp(-bound, bound).max(mode);
        Self { v, lambda, two_var, mode, e_min, lo, hi }
    }

    /// `f_v(m) / f_v(mode)`.
    fn weight(&self, m: i64) -> f64 {
        if m == self.mode {
            return 1.0;
        }
        let d = self.lambda * m as f64 - self.v;
        (self.e_min - d * d / self.two_var).exp()
    }
}

// Integer rounding through saturating casts; the libm fallbacks for
// floor/ceil/round showed up in profiles of the likelihood.
fn floor_int(x: f64) -> i64 {
    let t = x as i64;
    if (t as f64) > x { t - 1 } else { t }
}

fn ceil_int(x: f64) -> i64 {
    let t = x as i64;
    if (t as f64) < x { t + 1 } else { t }
}

fn round_int(x: f64) -> i64 {
    floor_int(x + 0.5)
}

/// A request for the bracket `⟨m^k⟩_v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BracketQuery {
    pub residual: f64,
    pub order: u32,
    pub nm: NoiseModel,
}

impl BracketQuery {
    pub fn new(residual: f64, order: u32, nm: NoiseModel) -> Result<Self> {
        if order > MAX_ORDER {
            return Err(Error::InvalidInput(format!("bracket order {order} exceeds {MAX_ORDER}")));
        }
        Ok(Self { residual, order, nm })
    }
}

pub fn bracket(q: &BracketQuery) -> f64 {
    posterior(q.residual, &q.nm).raw(q.order)
}

/// Compares `∂⟨m^k⟩_v/∂v = (λ/σ̃²)(⟨m^{k+1}⟩ − ⟨m^k⟩⟨m⟩)` with a central
/// difference. Returns `(analytic, numeric)`.
pub fn bracket_derivative_check(v: f64, k: u32, nm: &NoiseModel) -> Result<(f64, f64)> {
    if !(k == 1 || k == 2) {
        return Err(Error::InvalidInput(format!("derivative check supports k ∈ {{1, 2}}, got {k}")));
    }
    let p = posterior(v, nm);
    let analytic = nm.wavelength / (nm.sigma_cp * nm.sigma_cp) * (p.raw(k + 1) - p.raw(k) * p.mean);
    let h = 1e-6 * nm.sigma_cp.max(1e-3);
    let numeric = (posterior(v + h, nm).raw(k) - posterior(v - h, nm).raw(k)) / (2.0 * h);
    Ok((analytic, numeric))
}

/// MMSE ambiguity estimates `E_w(m_s | ỹ, G)` under the hypothesis `w`.
pub fn mmse_ambiguities(g: &Geometry, carrier: &[f64], w: &Vector4<f64>, nm: &NoiseModel) -> Vec<f64> {
    g.rows()
        .iter()
        .zip(carrier)
        .map(|(row, &yc)| posterior(yc - row.dot(w), nm).mean)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_hemisphere;
    use crate::measurement::{MeasurementSet, NoiseDraws, ParameterVector};
    use crate::rng::substream;
    use proptest::prelude::*;

    /// Direct sum over the full support with no shifting.
    fn direct_moment(v: f64, k: i32, nm: &NoiseModel) -> f64 {
        let b = nm.ambiguity_bound as i64;
        let mut num = 0.0;
        let mut den = 0.0;
        for m in -b..=b {
            let f = (-(nm.wavelength * m as f64 - v).powi(2) / (2.0 * nm.sigma_cp.powi(2))).exp();
            num += (m as f64).powi(k) * f;
            den += f;
        }
        num / den
    }

    fn nm(m: u32, lambda: f64, sigma_cp: f64) -> NoiseModel {
        NoiseModel::new(1.0, sigma_cp, lambda, m).unwrap()
    }

    #[test]
    fn mean_vanishes_at_zero_residual() {
        for (m, l, s) in [(1, 0.19, 0.05), (20, 0.19, 0.02), (5, 1.0, 3.0)] {
            assert!(posterior(0.0, &nm(m, l, s)).mean.abs() < 1e-15);
        }
    }

    #[test]
    fn sharp_posterior_picks_nearest_integer() {
        let q = BracketQuery::new(2.0, 1, nm(3, 1.0, 0.01)).unwrap();
        assert!((bracket(&q) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn second_moment_three_term_closed_form() {
        for (l, s) in [(0.19_f64, 0.1_f64), (1.0, 1.0), (0.5, 2.0)] {
            let e = (-(l * l) / (2.0 * s * s)).exp();
            let expected = 2.0 * e / (1.0 + 2.0 * e);
            let q = BracketQuery::new(0.0, 2, nm(1, l, s)).unwrap();
            assert!((bracket(&q) - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn degenerate_priors() {
        let p = posterior(0.7, &nm(0, 0.19, 0.05));
        assert_eq!((p.mean, p.second, p.third), (0.0, 0.0, 0.0));
        let flat = posterior(0.7, &nm(4, 0.0, 0.05));
        assert_eq!(flat.mean, 0.0);
        assert!((flat.second - direct_moment(0.7, 2, &nm(4, 0.0, 0.05))).abs() < 1e-12);
    }

    #[test]
    fn log_marginal_matches_direct_sum() {
        for (m, l, s) in [(0, 0.19, 0.05), (3, 0.19, 0.095), (20, 0.19, 0.02375), (4, 0.0, 0.05)] {
            let model = nm(m, l, s);
            let b = m as i64;
            for v in [-4.1, -0.3, 0.0, 0.07, 1.9, 6.0] {
                let direct: f64 = (-b..=b)
                    .map(|k| (-(l * k as f64 - v).powi(2) / (2.0 * s * s)).exp())
                    .sum::<f64>()
                    .ln();
                let fast = log_marginal(v, &model);
                assert!((fast - direct).abs() <= 1e-12 * direct.abs().max(1.0), "{m} {v}: {fast} vs {direct}");
                assert_eq!(fast, posterior(v, &model).log_norm);
            }
        }
    }

    #[test]
    fn order_above_three_rejected() {
        assert!(BracketQuery::new(0.0, 4, NoiseModel::default()).is_err());
    }

    #[test]
    fn finite_far_outside_support() {
        let model = nm(20, 0.19, 0.01);
        for v in [1e3, -1e6, 1e12] {
            let p = posterior(v, &model);
            assert!(p.mean.is_finite() && p.log_norm.is_finite());
            assert!((p.mean.abs() - 20.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_direct_sum() {
        let model = nm(6, 0.19, 0.08);
        for i in -40..=40 {
            let v = i as f64 * 0.037;
            let p = posterior(v, &model);
            for k in 1..=3 {
                let d = direct_moment(v, k, &model);
                assert!((p.raw(k as u32) - d).abs() < 1e-10 * (1.0 + d.abs()), "v {v} k {k}");
            }
            let var = direct_moment(v, 2, &model) - direct_moment(v, 1, &model).powi(2);
            assert!((p.variance - var).abs() < 1e-10);
        }
    }

    #[test]
    fn derivative_at_zero_reduces_to_second_moment() {
        let model = nm(5, 0.19, 0.06);
        let (a, _) = bracket_derivative_check(0.0, 1, &model).unwrap();
        let expected = 0.19 / 0.06_f64.powi(2) * posterior(0.0, &model).second;
        assert!((a - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn derivative_zero_without_ambiguity() {
        let (a, n) = bracket_derivative_check(0.3, 1, &nm(0, 0.19, 0.05)).unwrap();
        assert_eq!(a, 0.0);
        assert_eq!(n, 0.0);
    }

    #[test]
    fn derivative_second_order_spot_check() {
        let model = NoiseModel::from_ratio(1.0, 0.19, 4.0, 5).unwrap();
        let (a, n) = bracket_derivative_check(0.3 * 0.19, 2, &model).unwrap();
        assert!((a - n).abs() <= 1e-4 * (1.0 + a.abs()));
    }

    #[test]
    fn derivative_identity_on_grids() {
        for (m, ratio) in [(3u32, 2.0), (20, 4.0), (20, 8.0)] {
            let model = NoiseModel::from_ratio(1.0, 0.19, ratio, m).unwrap();
            let span = 0.19 * (m as f64 + 1.0);
            for i in 0..100 {
                let v = -span + 2.0 * span * i as f64 / 99.0;
                for k in [1, 2] {
                    let (a, n) = bracket_derivative_check(v, k, &model).unwrap();
                    assert!((a - n).abs() <= 1e-4 * (1.0 + a.abs()), "M {m} ratio {ratio} v {v} k {k}: {a} vs {n}");
                }
            }
        }
    }

    #[test]
    fn mmse_degenerate_cases() {
        let mut rng = substream(1, &[0]);
        let g = sample_hemisphere(&mut rng, 10).unwrap();
        let carrier: Vec<f64> = (0..10).map(|i| 0.13 * i as f64 - 0.4).collect();
        let w = Vector4::new(0.1, 0.2, 0.3, 0.4);
        assert!(mmse_ambiguities(&g, &carrier, &w, &nm(5, 0.0, 0.05)).iter().all(|&x| x == 0.0));
        assert!(mmse_ambiguities(&g, &carrier, &w, &nm(0, 0.19, 0.05)).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mmse_recovers_noiseless_ambiguities() {
        let model = NoiseModel::from_ratio(1.0, 0.19, 20.0, 20).unwrap();
        let mut rng = substream(2, &[0]);
        let g = sample_hemisphere(&mut rng, 30).unwrap();
        let m: Vec<i64> = (0..30).map(|i| (i * 7 % 41) - 20).collect();
        let truth = ParameterVector::new([0.4, -0.3, 1.1], -2.0);
        let ms = MeasurementSet::assemble(&g, &truth, &model, NoiseDraws::noiseless(m.clone())).unwrap();
        let est = mmse_ambiguities(&g, &ms.carrier, &truth.to_vector(), &model);
        for (e, &mi) in est.iter().zip(&m) {
            assert!((e - mi as f64).abs() <= 1e-9);
            assert!((direct_moment(ms.carrier[0] - g.rows()[0].dot(&truth.to_vector()), 1, &model) - m[0] as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn shift_quasi_periodicity() {
        let model = NoiseModel::from_ratio(1.0, 0.19, 3.0, 12).unwrap();
        for i in 0..21 {
            let v = -0.19 + 0.019 * i as f64;
            let base = posterior(v, &model).mean;
            for j in -3..=3 {
                let shifted = posterior(v + 0.19 * j as f64, &model).mean;
                assert!((shifted - base - j as f64).abs() < 1e-6, "v {v} j {j}");
            }
        }
    }

    proptest! {
        #[test]
        fn moments_bounded(v in -10.0f64..10.0, m in 0u32..25, ratio in 0.2f64..30.0) {
            let model = NoiseModel::from_ratio(1.0, 0.19, ratio, m).unwrap();
            let p = posterior(v, &model);
            let mf = m as f64;
            prop_assert!(p.mean.abs() <= mf + 1e-9);
            prop_assert!(p.second >= -1e-12 && p.second <= mf * mf + 1e-9);
            prop_assert!(p.variance >= 0.0);
            prop_assert!(p.second - p.mean * p.mean >= -1e-9 * (1.0 + mf * mf));
            prop_assert!(p.third_central.abs() <= 6.0 * mf.powi(3) + 1e-9);
        }
    }
}
