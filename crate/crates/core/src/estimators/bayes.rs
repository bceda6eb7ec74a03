//! Bayesian carrier-phase ML estimation with ambiguities treated as noise.

use nalgebra::{Matrix4, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;

use super::likelihood::Likelihood;
use super::{check_len, combined_fit, EstimateReport, Method, SolverConfig};
use crate::ambiguity::mmse_ambiguities;
use crate::error::Result;
use crate::geometry::{Geometry, NormalSolver};
use crate::measurement::{NoiseModel, ParameterVector};

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 60;
/// A start is dropped once its local quadratic model tops out this far
/// (in log-likelihood) below the best value already found.
const PRUNE_MARGIN: f64 = 25.0;

/// Solves `w = (GᵀG)⁻¹Gᵀ[αy + β(ỹ − λ·E_w(m | ỹ, G))]` by damped Picard
/// iteration from the pseudo-range estimate.
///
/// Stops once the undamped residual `‖T(w) − w‖` drops below `fp_tol`. The
/// blend factor is halved whenever two consecutive steps point in opposing
/// directions (negative inner product). Hitting `fp_max_iter` yields `converged = false`.
pub fn bayes_fixed_point(
    g: &Geometry,
    pseudo: &[f64],
    carrier: &[f64],
    nm: &NoiseModel,
    cfg: &SolverConfig,
) -> Result<EstimateReport> {
    check_len(g, pseudo, "pseudo")?;
    check_len(g, carrier, "carrier")?;
    cfg.validate()?;
    let solver = NormalSolver::new(g)?;
    let (w, iterations, converged) = fixed_point_from(&solver, g, pseudo, carrier, nm, cfg, solver.fit(g, pseudo));
    let ll = Likelihood::new(g, pseudo, carrier, nm).value(&w);
    Ok(EstimateReport {
        estimate: ParameterVector::from_vector(&w),
        method: Method::BayesFixedPoint,
        log_likelihood: ll,
        iterations,
        converged,
        starts_evaluated: 1,
        resolved_ambiguities: None,
    })
}

fn fixed_point_from(
    solver: &NormalSolver,
    g: &Geometry,
    pseudo: &[f64],
    carrier: &[f64],
    nm: &NoiseModel,
    cfg: &SolverConfig,
    start: Vector4<f64>,
) -> (Vector4<f64>, usize, bool) {
    let mut w = start;
    let mut damping = cfg.fp_damping;
    let mut last_step: Option<Vector4<f64>> = None;
    for it in 1..=cfg.fp_max_iter {
        let mmse = mmse_ambiguities(g, carrier, &w, nm);
        let update = combined_fit(solver, g, pseudo, carrier, mmse.into_iter(), nm);
        let residual = update - w;
        if residual.norm() < cfg.fp_tol {
            return (update, it, true);
        }
        if let Some(prev) = last_step {
            if prev.dot(&residual) < 0.0 {
                damping *= 0.5;
            }
        }
        let step = residual * damping;
        w += step;
        last_step = Some(step);
    }
    (w, cfg.fp_max_iter, false)
}

/// Outcome of one local likelihood ascent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentResult {
    pub point: Vector4<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Stopped early because the start could no longer win.
    pub abandoned: bool,
}

/// Damped Newton ascent on the log-likelihood.
///
/// Uses the Newton direction when the Hessian is negative definite. Otherwise
/// the eigenvalues of `−H` are replaced by their magnitudes (floored at
/// `1e−6` of the largest), which turns saddle directions into ascent
/// directions; a vanishing Hessian falls back to the gradient preconditioned
/// by `((σ⁻²+σ̃⁻²)GᵀG)⁻¹`. Armijo backtracking in every case.
pub fn local_ascent(lik: &Likelihood<'_>, solver: &NormalSolver, start: Vector4<f64>, cfg: &SolverConfig) -> AscentResult {
    ascend(lik, solver, start, cfg, f64::NEG_INFINITY)
}

/// [`local_ascent`] that gives up once, inside a concave region, the Newton
/// model predicts a maximum below `floor − PRUNE_MARGIN` (twice the
/// predicted gain is allowed for model error).
fn ascend(lik: &Likelihood<'_>, solver: &NormalSolver, start: Vector4<f64>, cfg: &SolverConfig, floor: f64) -> AscentResult {
    let info = lik.noise().known_ambiguity_information();
    let grad_tol = 1e-9 * info * lik.geometry().sat_count() as f64;
    let mut w = start;
    let mut model = lik.evaluate(&w);
    for it in 1..=cfg.local_max_iter {
        let newton = newton_direction(&model.hessian, &model.gradient);
        let concave = newton.is_some();
        let direction = newton
            .or_else(|| saddle_free_direction(&model.hessian, &model.gradient))
            .unwrap_or_else(|| solver.solve(&model.gradient) / info);
        let slope = model.gradient.dot(&direction);
        if !(slope > 0.0) {
            let converged = model.gradient.norm() <= grad_tol;
            return AscentResult { point: w, value: model.value, iterations: it, converged, abandoned: false };
        }
        if concave && model.value + slope + PRUNE_MARGIN < floor {
            return AscentResult { point: w, value: model.value, iterations: it, converged: false, abandoned: true };
        }
        // The full unit step is usually accepted, so evaluate it completely
        // and only fall back to value-only probes while backtracking.
        let mut t = 1.0;
        let mut accepted = None;
        let full = lik.evaluate(&(w + direction));
        if full.value >= model.value + ARMIJO * slope {
            accepted = Some((w + direction, Some(full)));
        } else {
            for _ in 1..MAX_BACKTRACK {
                t *= 0.5;
                let trial = w + direction * t;
                if lik.value(&trial) >= model.value + ARMIJO * t * slope {
                    accepted = Some((trial, None));
                    break;
                }
            }
        }
        let Some((next, next_model)) = accepted else {
            let converged = model.gradient.norm() <= grad_tol || direction.norm() < cfg.local_ascent_tol;
            return AscentResult { point: w, value: model.value, iterations: it, converged, abandoned: false };
        };
        let step = t * direction.norm();
        w = next;
        model = next_model.unwrap_or_else(|| lik.evaluate(&w));
        if step < cfg.local_ascent_tol {
            return AscentResult { point: w, value: model.value, iterations: it, converged: true, abandoned: false };
        }
    }
    AscentResult { point: w, value: model.value, iterations: cfg.local_max_iter, converged: false, abandoned: false }
}

fn newton_direction(hessian: &Matrix4<f64>, gradient: &Vector4<f64>) -> Option<Vector4<f64>> {
    let neg = -hessian;
    neg.cholesky().map(|c| c.solve(gradient))
}

fn saddle_free_direction(hessian: &Matrix4<f64>, gradient: &Vector4<f64>) -> Option<Vector4<f64>> {
    let eig = (-hessian).symmetric_eigen();
    let top = eig.eigenvalues.amax();
    if !(top > 0.0) || !top.is_finite() {
        return None;
    }
    let floor = 1e-6 * top;
    let mut d = Vector4::zeros();
    for (i, mu) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        d += v * (v.dot(gradient) / mu.abs().max(floor));
    }
    Some(d)
}

/// Global likelihood maximisation by local ascent from many starts.
///
/// Starts are the pseudo-range estimate itself plus `n_starts − 1` draws
/// from `N(ŵ_PR, (cσ)²(GᵀG)⁻¹)` with `c = start_radius_scale`. The
/// fixed-point solution is ascended as one extra start, so the result never
/// scores below it. The highest terminal log-likelihood wins. Starts that
/// are clearly headed for an inferior local maximum are abandoned early.
pub fn bayes_multistart<R: Rng + ?Sized>(
    g: &Geometry,
    pseudo: &[f64],
    carrier: &[f64],
    nm: &NoiseModel,
    cfg: &SolverConfig,
    rng: &mut R,
) -> Result<EstimateReport> {
    check_len(g, pseudo, "pseudo")?;
    check_len(g, carrier, "carrier")?;
    cfg.validate()?;
    let solver = NormalSolver::new(g)?;
    let lik = Likelihood::new(g, pseudo, carrier, nm);
    let center = solver.fit(g, pseudo);
    let spread = solver
        .inverse()
        .cholesky()
        .map(|c| c.l() * (cfg.start_radius_scale * nm.sigma))
        .unwrap_or_else(Matrix4::zeros);

    let (fp, _, _) = fixed_point_from(&solver, g, pseudo, carrier, nm, cfg, center);
    let mut starts = Vec::with_capacity(cfg.n_starts + 1);
    starts.push(center);
    starts.push(fp);
    for _ in 1..cfg.n_starts {
        let z = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        starts.push(center + spread * z);
    }

    let mut best: Option<AscentResult> = None;
    for start in &starts {
        let floor = best.map_or(f64::NEG_INFINITY, |b| b.value);
        let r = ascend(&lik, &solver, *start, cfg, floor);
        let better = match &best {
            None => true,
            Some(b) => r.value > b.value,
        };
        if better {
            best = Some(r);
        }
    }
    let best = best.expect("at least one start");
    Ok(EstimateReport {
        estimate: ParameterVector::from_vector(&best.point),
        method: Method::BayesMultiStart,
        log_likelihood: best.value,
        iterations: best.iterations,
        converged: best.converged,
        starts_evaluated: starts.len(),
        resolved_ambiguities: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{genie_cp, pr_ls};
    use crate::geometry::sample_hemisphere;
    use crate::measurement::{synthesize, MeasurementSet, NoiseDraws};
    use crate::rng::substream;

    fn instance(seed: u64, s: usize, nm: &NoiseModel) -> (Geometry, MeasurementSet) {
        let mut rng = substream(seed, &[0]);
        let g = sample_hemisphere(&mut rng, s).unwrap();
        let ms = synthesize(&mut rng, &g, &ParameterVector::new([0.1, 0.2, -0.3], 0.4), nm);
        (g, ms)
    }

    #[test]
    fn fixed_point_without_ambiguity_is_genie() {
        let nm = NoiseModel::default().with_bound(0);
        let (g, ms) = instance(1, 30, &nm);
        let fp = bayes_fixed_point(&g, &ms.pseudo, &ms.carrier, &nm, &SolverConfig::default()).unwrap();
        let genie = genie_cp(&g, &ms, &nm).unwrap();
        assert!(fp.converged);
        assert!(fp.iterations <= 2);
        assert!((fp.estimate.to_vector() - genie.estimate.to_vector()).amax() < 1e-10);
    }

    #[test]
    fn fixed_point_with_zero_wavelength_collapses() {
        let nm = NoiseModel::new(1.0, 0.05, 0.0, 20).unwrap();
        let (g, ms) = instance(2, 25, &nm);
        let fp = bayes_fixed_point(&g, &ms.pseudo, &ms.carrier, &nm, &SolverConfig::default()).unwrap();
        let genie = genie_cp(&g, &ms, &nm).unwrap();
        assert!(fp.converged && fp.iterations <= 2);
        assert!((fp.estimate.to_vector() - genie.estimate.to_vector()).amax() < 1e-10);
    }

    #[test]
    fn fixed_point_is_stationary() {
        for (ratio, seed) in [(2.0, 3), (4.0, 4), (8.0, 5)] {
            let nm = NoiseModel::from_ratio(1.0, 0.19, ratio, 20).unwrap();
            let (g, ms) = instance(seed, 60, &nm);
            // Near λ/σ̃ = 2 the map contracts slowly.
            let cfg = SolverConfig { fp_max_iter: 5000, ..Default::default() };
            let fp = bayes_fixed_point(&g, &ms.pseudo, &ms.carrier, &nm, &cfg).unwrap();
            assert!(fp.converged, "ratio {ratio}");
            let grad = Likelihood::new(&g, &ms.pseudo, &ms.carrier, &nm).gradient(&fp.estimate.to_vector());
            let tol = 1e-6 * nm.known_ambiguity_information() * 60.0;
            assert!(grad.norm() <= tol, "ratio {ratio}: {}", grad.norm());
        }
    }

    #[test]
    fn multistart_without_ambiguity_matches_fixed_point() {
        let nm = NoiseModel::default().with_bound(0);
        let (g, ms) = instance(6, 20, &nm);
        let cfg = SolverConfig { n_starts: 10, ..Default::default() };
        let fp = bayes_fixed_point(&g, &ms.pseudo, &ms.carrier, &nm, &cfg).unwrap();
        let mut rng = substream(6, &[1]);
        let msr = bayes_multistart(&g, &ms.pseudo, &ms.carrier, &nm, &cfg, &mut rng).unwrap();
        assert!((fp.estimate.to_vector() - msr.estimate.to_vector()).amax() < 1e-6);
        assert_eq!(msr.starts_evaluated, 11);
    }

    #[test]
    fn multistart_dominates_starting_points() {
        let nm = NoiseModel::default();
        let cfg = SolverConfig { n_starts: 30, ..Default::default() };
        for seed in 10..15 {
            let (g, ms) = instance(seed, 50, &nm);
            let lik = Likelihood::new(&g, &ms.pseudo, &ms.carrier, &nm);
            let fp = bayes_fixed_point(&g, &ms.pseudo, &ms.carrier, &nm, &cfg).unwrap();
            let pr = pr_ls(&g, &ms.pseudo).unwrap();
            let mut rng = substream(seed, &[1]);
            let best = bayes_multistart(&g, &ms.pseudo, &ms.carrier, &nm, &cfg, &mut rng).unwrap();
            assert!(best.log_likelihood >= fp.log_likelihood);
            assert!(best.log_likelihood >= lik.value(&pr.estimate.to_vector()));
        }
    }

    #[test]
    fn multistart_is_deterministic_given_stream() {
        let nm = NoiseModel::default();
        let (g, ms) = instance(20, 40, &nm);
        let cfg = SolverConfig { n_starts: 15, ..Default::default() };
        let a = bayes_multistart(&g, &ms.pseudo, &ms.carrier, &nm, &cfg, &mut substream(9, &[9])).unwrap();
        let b = bayes_multistart(&g, &ms.pseudo, &ms.carrier, &nm, &cfg, &mut substream(9, &[9])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn estimators_shift_with_clock_bias() {
        let nm = NoiseModel::default();
        let cfg = SolverConfig { n_starts: 10, ..Default::default() };
        let mut rng = substream(30, &[0]);
        let g = sample_hemisphere(&mut rng, 40).unwrap();
        let draws = NoiseDraws::sample(&mut rng, 40, &nm);
        let w = ParameterVector::new([0.1, -0.2, 0.05], 0.3);
        let delta = 2.5;
        let w2 = ParameterVector::new(w.position, w.clock_bias + delta);
        let a = MeasurementSet::assemble(&g, &w, &nm, draws.clone()).unwrap();
        let b = MeasurementSet::assemble(&g, &w2, &nm, draws).unwrap();
        let close = |x: &EstimateReport, y: &EstimateReport| {
            let d = y.estimate.to_vector() - x.estimate.to_vector();
            (d[3] - delta).abs() < 1e-8 && d.fixed_rows::<3>(0).amax() < 1e-8
        };
        assert!(close(&pr_ls(&g, &a.pseudo).unwrap(), &pr_ls(&g, &b.pseudo).unwrap()));
        assert!(close(&genie_cp(&g, &a, &nm).unwrap(), &genie_cp(&g, &b, &nm).unwrap()));
        let fa = bayes_fixed_point(&g, &a.pseudo, &a.carrier, &nm, &cfg).unwrap();
        let fb = bayes_fixed_point(&g, &b.pseudo, &b.carrier, &nm, &cfg).unwrap();
        assert!(close(&fa, &fb));
    }
}
