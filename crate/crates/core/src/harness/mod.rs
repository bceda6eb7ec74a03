//! Seeded Monte Carlo experiments and their tabular output.
//!
//! Every trial draws from its own substream addressed by
//! `(seed, experiment tag, sat count, trial id)`, and results are collected
//! in trial order, so output is identical for any worker count.

mod contour;
mod dop;
mod fisher;
mod sweeps;
mod table;
mod trials;

pub use contour::{polish_stationary_2d, run_contour, ContourGrid};
pub use dop::{run_dop_experiment, DopRow};
pub use fisher::{run_fisher_check, FisherCheck};
pub use sweeps::{count_local_maxima, run_hcurve, run_noise_pdf, run_pcorr, NoisePdfCurve};
pub use table::{Cell, Format, Table};
pub use trials::{
    run_covariance_check, run_error_cdf, CovarianceRow, CovarianceSummary, ErrorCdfResult, MethodCdf, TrialRecord,
    NONCONVERGED_LIMIT,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::SolverConfig;
use crate::geometry::{sample_hemisphere, Geometry, NormalSolver};
use crate::measurement::{NoiseModel, ParameterVector};

/// Maximum redraws of a degenerate constellation before giving up.
pub const MAX_RESAMPLE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Experiment {
    Dop,
    NoisePdf,
    HCurve,
    Contour,
    ErrorCdf,
    Pcorr,
    FisherCheck,
    CovarianceCheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ErrorMetric {
    /// `‖x̂ − x‖`, meters.
    #[default]
    Pos3D,
    /// `‖ŵ − w‖` including the clock bias.
    PosClock4D,
}

impl ErrorMetric {
    pub fn error(&self, estimate: &ParameterVector, truth: &ParameterVector) -> f64 {
        let d = estimate.to_vector() - truth.to_vector();
        match self {
            ErrorMetric::Pos3D => d.fixed_rows::<3>(0).norm(),
            ErrorMetric::PosClock4D => d.norm(),
        }
    }
}

/// Regular 2-D or 1-D evaluation grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// Offset of the grid center from the truth (contour) or zero (pdf).
    pub center: [f64; 2],
    pub half_width: f64,
    pub points: usize,
}

impl Grid {
    pub fn axis(&self, dim: usize) -> Vec<f64> {
        // Offsets from the centre are exactly antisymmetric.
        let n = self.points.max(2);
        let last = (n - 1) as f64;
        (0..n).map(|i| self.center[dim] + self.half_width * (2.0 * i as f64 - last) / last).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub nm: NoiseModel,
    pub sat_counts: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    pub error_metric: ErrorMetric,
    pub output_path: Option<String>,
    pub grid: Option<Grid>,
    /// `λ/σ̃` sweep for noise-pdf, hcurve and pcorr.
    pub ratios: Vec<f64>,
    /// Monte Carlo sample count for hcurve, fisher-check and the `h` used by
    /// cov-check.
    pub samples: usize,
    pub threads: Option<usize>,
    pub format: Format,
    /// Test hook: zero receiver noise in trial experiments.
    #[serde(skip)]
    pub zero_noise: bool,
}

fn ratio_sweep(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

impl ExperimentConfig {
    /// Defaults chosen to mirror the published experiments at desk scale.
    pub fn defaults(experiment: Experiment) -> Self {
        let nm = NoiseModel::default();
        let base = Self {
            experiment,
            nm,
            sat_counts: vec![50],
            trials: 2000,
            seed: 1,
            solver: SolverConfig::default(),
            error_metric: ErrorMetric::Pos3D,
            output_path: None,
            grid: None,
            ratios: Vec::new(),
            samples: 1_000_000,
            threads: None,
            format: Format::Csv,
            zero_noise: false,
        };
        match experiment {
            Experiment::Dop => Self {
                sat_counts: vec![4, 5, 6, 8, 10, 15, 20, 30, 50, 100, 200, 500, 1000],
                trials: 10_000,
                ..base
            },
            Experiment::NoisePdf => Self {
                nm: nm.with_bound(3),
                ratios: vec![2.0, 4.0, 8.0],
                ..base
            },
            Experiment::HCurve => Self { ratios: ratio_sweep(0.0, 10.0, 0.25), ..base },
            Experiment::Contour => Self {
                grid: Some(Grid { center: [0.0, 0.0], half_width: 2.0 * nm.wavelength, points: 161 }),
                ..base
            },
            Experiment::ErrorCdf => base,
            Experiment::Pcorr => Self {
                sat_counts: vec![4, 10, 20, 50, 100, 200, 500, 1000],
                ratios: ratio_sweep(0.0, 10.0, 0.5),
                ..base
            },
            Experiment::FisherCheck => base,
            Experiment::CovarianceCheck => Self {
                nm: NoiseModel::from_ratio(1.0, 0.19, 8.0, 20).expect("valid defaults"),
                sat_counts: vec![1000],
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.nm.validate()?;
        self.solver.validate()?;
        let invalid = |msg: String| Err(Error::InvalidInput(msg));
        if self.trials == 0 {
            return invalid("trials must be at least 1".into());
        }
        let needs_sats = !matches!(self.experiment, Experiment::NoisePdf | Experiment::HCurve | Experiment::FisherCheck);
        if needs_sats && self.sat_counts.is_empty() {
            return invalid("sat_counts must not be empty".into());
        }
        if self.sat_counts.contains(&0) {
            return invalid("sat_counts must be positive".into());
        }
        if self.experiment == Experiment::Dop && self.sat_counts.iter().any(|&s| !(4..=10_000).contains(&s)) {
            return invalid("dop sat_counts must lie in [4, 10000]".into());
        }
        if matches!(self.experiment, Experiment::ErrorCdf | Experiment::CovarianceCheck | Experiment::Contour)
            && self.sat_counts.iter().any(|&s| s < 4)
        {
            return invalid("estimators need at least 4 satellites".into());
        }
        if matches!(self.experiment, Experiment::NoisePdf | Experiment::HCurve | Experiment::Pcorr) {
            if self.ratios.is_empty() {
                return invalid("ratio sweep must not be empty".into());
            }
            if self.ratios.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
                return invalid("ratios must be finite and non-negative".into());
            }
        }
        if self.experiment == Experiment::NoisePdf && self.ratios.contains(&0.0) {
            return invalid("noise-pdf ratios must be positive".into());
        }
        if matches!(self.experiment, Experiment::HCurve | Experiment::FisherCheck | Experiment::CovarianceCheck)
            && self.samples < crate::asymptotics::MIN_SAMPLES
        {
            return invalid(format!("samples must be at least {}", crate::asymptotics::MIN_SAMPLES));
        }
        if let Some(g) = &self.grid {
            if !(g.half_width > 0.0) || g.points < 3 {
                return invalid("grid needs half_width > 0 and at least 3 points".into());
            }
        }
        Ok(())
    }
}

/// Draws a hemisphere geometry with an invertible normal matrix.
///
/// Returns the geometry, its factorised normal matrix and the number of
/// rejected draws.
pub fn sample_regular_geometry<R: Rng + ?Sized>(rng: &mut R, sat_count: usize) -> Result<(Geometry, NormalSolver, usize)> {
    for attempt in 0..MAX_RESAMPLE {
        let g = sample_hemisphere(rng, sat_count)?;
        match NormalSolver::new(&g) {
            Ok(solver) => return Ok((g, solver, attempt)),
            Err(Error::SingularGeometry { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::ResampleExhausted { sat_count, attempts: MAX_RESAMPLE })
}

/// Runs the configured experiment and returns its primary table.
pub fn run(cfg: &ExperimentConfig) -> Result<Table> {
    cfg.validate()?;
    crate::parallel::with_threads(cfg.threads, || match cfg.experiment {
        Experiment::Dop => run_dop_experiment(cfg).map(|rows| dop::table(&rows)),
        Experiment::NoisePdf => run_noise_pdf(cfg).map(|c| sweeps::noise_pdf_table(&c)),
        Experiment::HCurve => run_hcurve(cfg).map(|p| sweeps::hcurve_table(&p)),
        Experiment::Contour => run_contour(cfg).map(|g| g.table()),
        Experiment::ErrorCdf => run_error_cdf(cfg).map(|r| r.cdf_table()),
        Experiment::Pcorr => run_pcorr(cfg),
        Experiment::FisherCheck => run_fisher_check(cfg).map(|f| f.table()),
        Experiment::CovarianceCheck => run_covariance_check(cfg).map(|s| s.table()),
    })
}
