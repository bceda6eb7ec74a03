use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, Table};
use crate::asymptotics::{h_function, pcorr, HCurvePoint};
use crate::error::Result;
use crate::measurement::{combined_noise_pdf, NoiseModel};

/// Combined carrier noise density sampled on a grid for one `λ/σ̃`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePdfCurve {
    pub ratio: f64,
    pub nm: NoiseModel,
    pub v: Vec<f64>,
    pub pdf: Vec<f64>,
}

impl NoisePdfCurve {
    /// Strict interior local maxima of the sampled density.
    pub fn peak_count(&self) -> usize {
        self.pdf.windows(3).filter(|w| w[1] > w[0] && w[1] > w[2]).count()
    }
}

/// Without a configured grid, each curve covers `±(λM + 6σ̃)` on a zero-centred grid of spacing `σ̃/10`.
pub fn run_noise_pdf(cfg: &ExperimentConfig) -> Result<Vec<NoisePdfCurve>> {
    cfg.ratios
        .iter()
        .map(|&ratio| {
            let nm = NoiseModel::from_ratio(cfg.nm.sigma, cfg.nm.wavelength, ratio, cfg.nm.ambiguity_bound)?;
            let v = match &cfg.grid {
                Some(g) => g.axis(0),
                None => {
                    let half = nm.wavelength * nm.ambiguity_bound as f64 + 6.0 * nm.sigma_cp;
                    let step = nm.sigma_cp / 10.0;
                    let k = (half / step).ceil() as i64;
                    (-k..=k).map(|i| i as f64 * step).collect()
                }
            };
            let pdf = v.iter().map(|&x| combined_noise_pdf(x, &nm)).collect();
            Ok(NoisePdfCurve { ratio, nm, v, pdf })
        })
        .collect()
}

pub(crate) fn noise_pdf_table(curves: &[NoisePdfCurve]) -> Table {
    let mut t = Table::new(vec!["ratio", "v", "pdf"]);
    for c in curves {
        for (v, p) in c.v.iter().zip(&c.pdf) {
            t.push(vec![c.ratio.into(), (*v).into(), (*p).into()]);
        }
    }
    t
}

/// Every ratio reuses the same seed, so neighbouring points are positively
/// correlated and differences along the curve are sharper than the
/// individual standard errors suggest.
pub fn run_hcurve(cfg: &ExperimentConfig) -> Result<Vec<HCurvePoint>> {
    cfg.ratios
        .iter()
        .map(|&r| h_function(r, cfg.nm.ambiguity_bound, cfg.samples, cfg.seed))
        .collect()
}

pub(crate) fn hcurve_table(points: &[HCurvePoint]) -> Table {
    let mut t = Table::new(vec!["ratio", "big_m", "h", "std_err", "n_samples"]);
    for p in points {
        t.push(vec![p.ratio.into(), p.big_m.into(), p.h_value.into(), p.std_err.into(), p.n_samples.into()]);
    }
    t
}

pub fn run_pcorr(cfg: &ExperimentConfig) -> Result<Table> {
    let mut t = Table::new(vec!["ratio", "sat_count", "pcorr"]);
    for &s in &cfg.sat_counts {
        for &r in &cfg.ratios {
            t.push(vec![r.into(), s.into(), pcorr(r, s)?.into()]);
        }
    }
    Ok(t)
}

/// Counts interior grid points strictly greater than all eight neighbours.
///
/// `values[i][j]` is the value at the `i`-th first coordinate and `j`-th
/// second coordinate; rows must have equal length.
pub fn count_local_maxima(values: &[Vec<f64>]) -> usize {
    let n = values.len();
    if n < 3 {
        return 0;
    }
    let m = values[0].len();
    let mut count = 0;
    for i in 1..n - 1 {
        for j in 1..m.saturating_sub(1) {
            let c = values[i][j];
            let strict = (i - 1..=i + 1)
                .flat_map(|a| (j - 1..=j + 1).map(move |b| (a, b)))
                .filter(|&(a, b)| (a, b) != (i, j))
                .all(|(a, b)| c > values[a][b]);
            if strict {
                count += 1;
            }
        }
    }
    count
}
