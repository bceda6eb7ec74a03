use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, Table};
use crate::asymptotics::{fisher_factor, monte_carlo, McEstimate};
use crate::error::Result;
use crate::estimators::Likelihood;
use crate::geometry::{Geometry, UnitVector3};
use crate::measurement::{MeasurementSet, NoiseDraws, ParameterVector};
use crate::rng::tag;

/// Two Monte Carlo routes to the per-satellite Fisher information factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherCheck {
    /// `E[(∂ℓ/∂b)²]` for a single observation, `b` the clock bias.
    pub i_factor: McEstimate,
    /// `E[−∂²ℓ/∂b²]` on the same draws.
    pub j_factor: McEstimate,
    /// Paired `I − J` per draw.
    pub difference: McEstimate,
    /// `E[∂ℓ/∂b]`, zero at the truth.
    pub score_mean: McEstimate,
    /// Posterior-variance route with an independent stream.
    pub reference: McEstimate,
    /// `σ⁻² + σ̃⁻²`, the value with known ambiguities.
    pub known_ambiguity: f64,
}

impl FisherCheck {
    /// `|I − J|` in units of the pooled standard error.
    pub fn pooled_z(&self) -> f64 {
        let pooled = self.i_factor.std_err.hypot(self.j_factor.std_err);
        if pooled == 0.0 {
            return if self.i_factor.mean == self.j_factor.mean { 0.0 } else { f64::INFINITY };
        }
        (self.i_factor.mean - self.j_factor.mean).abs() / pooled
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(vec!["quantity", "mean", "std_err", "n_samples"]);
        let rows = [
            ("I", self.i_factor),
            ("J", self.j_factor),
            ("I_minus_J", self.difference),
            ("score_mean", self.score_mean),
            ("fisher_factor", self.reference),
        ];
        for (name, e) in rows {
            t.push(vec![name.into(), e.mean.into(), e.std_err.into(), e.n_samples.into()]);
        }
        t.push(vec!["known_ambiguity".into(), self.known_ambiguity.into(), 0.0.into(), 0usize.into()]);
        t
    }
}

/// Score and curvature of one zenith observation `(y, ỹ)` at the true clock
/// bias, averaged over `cfg.samples` draws of `(z, z̃, m)`.
pub fn run_fisher_check(cfg: &ExperimentConfig) -> Result<FisherCheck> {
    let nm = cfg.nm;
    nm.validate()?;
    let g = Geometry::from_units(vec![UnitVector3::from_up_azimuth(1.0, 0.0)])?;
    let truth = ParameterVector::zero();
    let w = truth.to_vector();
    let [i_factor, j_factor, difference, score_mean] = monte_carlo(cfg.samples, cfg.seed, tag::FISHER, |rng| {
        let draws = NoiseDraws::sample(rng, 1, &nm);
        let ms = MeasurementSet::assemble(&g, &truth, &nm, draws).expect("one satellite");
        let lik = Likelihood::new(&g, &ms.pseudo, &ms.carrier, &nm);
        let score = lik.gradient(&w)[3];
        let curvature = -lik.hessian(&w)[(3, 3)];
        let i = score * score;
        [i, curvature, i - curvature, score]
    });
    let reference = fisher_factor(&nm, cfg.samples, cfg.seed)?;
    Ok(FisherCheck {
        i_factor,
        j_factor,
        difference,
        score_mean,
        reference,
        known_ambiguity: nm.known_ambiguity_information(),
    })
}
