use serde::{Deserialize, Serialize};

use super::{sample_regular_geometry, ExperimentConfig, Table};
use crate::error::Result;
use crate::geometry::dop_of_normal;
use crate::parallel::map_indexed;
use crate::rng::{substream, tag};

/// Statistics of `√S·DOP` at one satellite count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DopRow {
    pub sat_count: usize,
    pub mean_scaled_dop: f64,
    pub std_scaled_dop: f64,
    pub trials: usize,
    /// Geometries rejected as singular and redrawn.
    pub resampled: usize,
}

pub fn run_dop_experiment(cfg: &ExperimentConfig) -> Result<Vec<DopRow>> {
    let mut rows = Vec::with_capacity(cfg.sat_counts.len());
    for &s in &cfg.sat_counts {
        let draws = map_indexed(cfg.trials, |t| -> Result<(f64, usize)> {
            let mut rng = substream(cfg.seed, &[tag::DOP, s as u64, t as u64]);
            let (_, solver, rejected) = sample_regular_geometry(&mut rng, s)?;
            let d = dop_of_normal(solver.normal(), s)?;
            Ok(((s as f64).sqrt() * d, rejected))
        });
        let draws = draws.into_iter().collect::<Result<Vec<_>>>()?;
        let n = draws.len() as f64;
        let mean = draws.iter().map(|d| d.0).sum::<f64>() / n;
        let var = if draws.len() > 1 {
            draws.iter().map(|d| (d.0 - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        rows.push(DopRow {
            sat_count: s,
            mean_scaled_dop: mean,
            std_scaled_dop: var.sqrt(),
            trials: draws.len(),
            resampled: draws.iter().map(|d| d.1).sum(),
        });
    }
    Ok(rows)
}

pub(crate) fn table(rows: &[DopRow]) -> Table {
    let mut t = Table::new(vec!["sat_count", "mean_sqrt_s_dop", "std_sqrt_s_dop", "trials", "resampled"]);
    for r in rows {
        t.push(vec![
            r.sat_count.into(),
            r.mean_scaled_dop.into(),
            r.std_scaled_dop.into(),
            r.trials.into(),
            r.resampled.into(),
        ]);
    }
    t
}
