use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use std::time::Instant;

use super::{sample_regular_geometry, ExperimentConfig, Table};
use crate::asymptotics::{h_function, predicted_covariance};
use crate::error::Result;
use crate::estimators::{
    bayes_fixed_point, bayes_multistart, genie_cp, pr_ls, standard_resolution, EstimateReport, Likelihood, Method,
};
use crate::measurement::{MeasurementSet, NoiseDraws, ParameterVector};
use crate::parallel::map_indexed;
use crate::rng::{substream, tag};

/// Share of nonconverged trials above which a covariance run is flagged.
pub const NONCONVERGED_LIMIT: f64 = 0.01;

/// One estimator applied to one synthesized trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub sat_count: usize,
    pub method: Method,
    /// Meters, per the configured error metric.
    pub error_norm: f64,
    /// Full-model log-likelihood at the estimate, whatever the method.
    pub log_likelihood: f64,
    pub converged: bool,
    pub wall_time_ms: f64,
}

struct Outcome {
    record: TrialRecord,
    estimate: Vector4<f64>,
}

fn timed<F>(f: F) -> Result<(EstimateReport, f64)>
where
    F: FnOnce() -> Result<EstimateReport>,
{
    let start = Instant::now();
    let r = f()?;
    Ok((r, start.elapsed().as_secs_f64() * 1e3))
}

/// Synthesizes trial `t` and applies each method in order.
///
/// The trial reads the substream `(seed, [domain, S, t])` for geometry,
/// noise and multi-start draws, in that order.
fn run_trial(cfg: &ExperimentConfig, domain: u64, s: usize, t: usize, methods: &[Method]) -> Result<Vec<Outcome>> {
    let mut rng = substream(cfg.seed, &[domain, s as u64, t as u64]);
    let (g, _, _) = sample_regular_geometry(&mut rng, s)?;
    let truth = ParameterVector::zero();
    let draws = if cfg.zero_noise {
        NoiseDraws::noiseless(vec![0; s])
    } else {
        NoiseDraws::sample(&mut rng, s, &cfg.nm)
    };
    let ms = MeasurementSet::assemble(&g, &truth, &cfg.nm, draws)?;
    let nm = &cfg.nm;
    let lik = Likelihood::new(&g, &ms.pseudo, &ms.carrier, nm);
    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let (report, ms_elapsed) = match method {
            Method::PseudoRange => timed(|| pr_ls(&g, &ms.pseudo))?,
            Method::GenieCP => timed(|| genie_cp(&g, &ms, nm))?,
            Method::StandardResolution => timed(|| standard_resolution(&g, &ms.pseudo, &ms.carrier, nm))?,
            Method::BayesMultiStart => {
                timed(|| bayes_multistart(&g, &ms.pseudo, &ms.carrier, nm, &cfg.solver, &mut rng))?
            }
            Method::BayesFixedPoint => timed(|| bayes_fixed_point(&g, &ms.pseudo, &ms.carrier, nm, &cfg.solver))?,
        };
        let estimate = report.estimate.to_vector();
        out.push(Outcome {
            record: TrialRecord {
                trial_id: t,
                sat_count: s,
                method,
                error_norm: cfg.error_metric.error(&report.estimate, &truth),
                log_likelihood: lik.value(&estimate),
                converged: report.converged,
                wall_time_ms: ms_elapsed,
            },
            estimate,
        });
    }
    Ok(out)
}

fn run_trials(cfg: &ExperimentConfig, domain: u64, s: usize, methods: &[Method]) -> Result<Vec<Vec<Outcome>>> {
    map_indexed(cfg.trials, |t| run_trial(cfg, domain, s, t, methods)).into_iter().collect()
}

/// Sorted errors of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodCdf {
    pub method: Method,
    pub sorted_errors: Vec<f64>,
}

impl MethodCdf {
    pub fn median(&self) -> f64 {
        let e = &self.sorted_errors;
        let n = e.len();
        if n == 0 {
            return f64::NAN;
        }
        if n % 2 == 1 {
            e[n / 2]
        } else {
            0.5 * (e[n / 2 - 1] + e[n / 2])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCdfResult {
    pub records: Vec<TrialRecord>,
    pub cdfs: Vec<MethodCdf>,
    /// Trials in which standard resolution is strictly worse than the
    /// pseudo-range estimate.
    pub resolution_worse_fraction: f64,
}

impl ErrorCdfResult {
    pub fn cdf(&self, method: Method) -> Option<&MethodCdf> {
        self.cdfs.iter().find(|c| c.method == method)
    }

    /// Per method: sorted errors with empirical CDF levels `k/n`.
    pub fn cdf_table(&self) -> Table {
        let mut t = Table::new(vec!["method", "error", "cdf"]);
        for c in &self.cdfs {
            let n = c.sorted_errors.len() as f64;
            for (k, e) in c.sorted_errors.iter().enumerate() {
                t.push(vec![c.method.name().into(), (*e).into(), ((k + 1) as f64 / n).into()]);
            }
        }
        t
    }

    pub fn summary_table(&self) -> Table {
        let mut t = Table::new(vec!["method", "median_error", "trials", "resolution_worse_fraction"]);
        for c in &self.cdfs {
            t.push(vec![
                c.method.name().into(),
                c.median().into(),
                c.sorted_errors.len().into(),
                self.resolution_worse_fraction.into(),
            ]);
        }
        t
    }

    /// Every trial record, including wall time. Not reproducible byte for byte.
    pub fn records_table(&self) -> Table {
        records_table(&self.records)
    }
}

pub(crate) fn records_table(records: &[TrialRecord]) -> Table {
    let mut t = Table::new(vec![
        "trial_id",
        "sat_count",
        "method",
        "error_norm",
        "log_likelihood",
        "converged",
        "wall_time_ms",
    ]);
    for r in records {
        t.push(vec![
            r.trial_id.into(),
            r.sat_count.into(),
            r.method.name().into(),
            r.error_norm.into(),
            r.log_likelihood.into(),
            r.converged.into(),
            r.wall_time_ms.into(),
        ]);
    }
    t
}

const CDF_METHODS: [Method; 3] = [Method::PseudoRange, Method::StandardResolution, Method::BayesMultiStart];

/// Compares pseudo-range, standard resolution and multi-start Bayesian
/// positioning on freshly drawn trials at the first configured `S`.
pub fn run_error_cdf(cfg: &ExperimentConfig) -> Result<ErrorCdfResult> {
    let s = cfg.sat_counts[0];
    let trials = run_trials(cfg, tag::TRIAL, s, &CDF_METHODS)?;
    let worse = trials.iter().filter(|o| o[1].record.error_norm > o[0].record.error_norm).count();
    let cdfs = CDF_METHODS
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let mut sorted_errors: Vec<f64> = trials.iter().map(|o| o[k].record.error_norm).collect();
            sorted_errors.sort_by(f64::total_cmp);
            MethodCdf { method, sorted_errors }
        })
        .collect();
    Ok(ErrorCdfResult {
        records: trials.into_iter().flatten().map(|o| o.record).collect(),
        cdfs,
        resolution_worse_fraction: worse as f64 / cfg.trials as f64,
    })
}

/// Empirical against predicted covariance of `√S(ŵ − w)` for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceRow {
    pub method: Method,
    pub empirical: Matrix4<f64>,
    pub predicted: Matrix4<f64>,
    /// `‖C − P‖_F / ‖P‖_F`.
    pub frobenius_rel_dev: f64,
    pub trials_used: usize,
    pub nonconverged: usize,
    /// Set when more than 1% of the trials did not converge.
    pub flagged: bool,
}

impl CovarianceRow {
    /// `|C_ij − P_ij| / |P_ij|`, or the absolute deviation where `P_ij = 0`.
    pub fn entry_deviation(&self, i: usize, j: usize) -> f64 {
        let d = (self.empirical[(i, j)] - self.predicted[(i, j)]).abs();
        let p = self.predicted[(i, j)].abs();
        if p > 0.0 {
            d / p
        } else {
            d
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSummary {
    pub sat_count: usize,
    pub h_value: f64,
    pub h_std_err: f64,
    pub rows: Vec<CovarianceRow>,
    pub records: Vec<TrialRecord>,
}

impl CovarianceSummary {
    pub fn row(&self, method: Method) -> Option<&CovarianceRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(vec![
            "method",
            "i",
            "j",
            "empirical",
            "predicted",
            "entry_rel_dev",
            "frobenius_rel_dev",
            "trials_used",
            "nonconverged",
            "flagged",
        ]);
        for r in &self.rows {
            for i in 0..4 {
                for j in 0..4 {
                    t.push(vec![
                        r.method.name().into(),
                        i.into(),
                        j.into(),
                        r.empirical[(i, j)].into(),
                        r.predicted[(i, j)].into(),
                        r.entry_deviation(i, j).into(),
                        r.frobenius_rel_dev.into(),
                        r.trials_used.into(),
                        r.nonconverged.into(),
                        r.flagged.into(),
                    ]);
                }
            }
        }
        t
    }

    pub fn records_table(&self) -> Table {
        records_table(&self.records)
    }
}

/// Sample covariance with the sample mean removed.
fn sample_covariance(xs: &[Vector4<f64>]) -> Matrix4<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().fold(Vector4::zeros(), |a, x| a + x) / n;
    let sum = xs.iter().fold(Matrix4::zeros(), |a, x| {
        let d = x - mean;
        a + d * d.transpose()
    });
    sum / (n - 1.0).max(1.0)
}

const COVARIANCE_METHODS: [Method; 3] = [Method::PseudoRange, Method::GenieCP, Method::BayesMultiStart];

/// Checks the limiting covariances at the first configured `S`.
///
/// The Bayesian prediction uses `h_M` estimated from `cfg.samples` draws.
/// Nonconverged trials are left out of a method's statistics and counted.
pub fn run_covariance_check(cfg: &ExperimentConfig) -> Result<CovarianceSummary> {
    let s = cfg.sat_counts[0];
    let h = h_function(cfg.nm.ratio(), cfg.nm.ambiguity_bound, cfg.samples, cfg.seed)?;
    let trials = run_trials(cfg, tag::COVARIANCE, s, &COVARIANCE_METHODS)?;
    let scale = (s as f64).sqrt();
    let mut rows = Vec::with_capacity(COVARIANCE_METHODS.len());
    for (k, &method) in COVARIANCE_METHODS.iter().enumerate() {
        let used: Vec<Vector4<f64>> = trials
            .iter()
            .filter(|o| o[k].record.converged)
            .map(|o| o[k].estimate * scale)
            .collect();
        let nonconverged = trials.len() - used.len();
        let empirical = sample_covariance(&used);
        let predicted = predicted_covariance(method, &cfg.nm, Some(h.h_value))?;
        rows.push(CovarianceRow {
            method,
            empirical,
            predicted,
            frobenius_rel_dev: (empirical - predicted).norm() / predicted.norm(),
            trials_used: used.len(),
            nonconverged,
            flagged: nonconverged as f64 > NONCONVERGED_LIMIT * trials.len() as f64,
        });
    }
    Ok(CovarianceSummary {
        sat_count: s,
        h_value: h.h_value,
        h_std_err: h.std_err,
        rows,
        records: trials.into_iter().flatten().map(|o| o.record).collect(),
    })
}
