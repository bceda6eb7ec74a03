use nalgebra::{Matrix2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use super::{count_local_maxima, sample_regular_geometry, ExperimentConfig, Grid, Table};
use crate::error::{Error, Result};
use crate::estimators::Likelihood;
use crate::measurement::{MeasurementSet, NoiseDraws, ParameterVector};
use crate::rng::{substream, tag};

/// Log-likelihood over `(w₁, w₂)` with `w₃, w₄` pinned to the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourGrid {
    pub truth: ParameterVector,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    /// `values[i][j]` at `(w1[i], w2[j])`.
    pub values: Vec<Vec<f64>>,
    pub local_maxima: usize,
    pub grid_argmax: [f64; 2],
    /// Stationary point reached by polishing from the grid maximum.
    pub polished: [f64; 2],
    pub polished_gradient_norm: f64,
}

impl ContourGrid {
    pub fn table(&self) -> Table {
        let mut t = Table::new(vec!["w1", "w2", "log_likelihood"]);
        for (i, &a) in self.w1.iter().enumerate() {
            for (j, &b) in self.w2.iter().enumerate() {
                t.push(vec![a.into(), b.into(), self.values[i][j].into()]);
            }
        }
        t
    }
}

/// Newton iteration on the first two gradient components with `w₃, w₄`
/// held fixed. Falls back to a short gradient step wherever the 2×2
/// Hessian block is not negative definite.
///
/// Returns the final point and the norm of gradient components 1–2 there.
pub fn polish_stationary_2d(lik: &Likelihood<'_>, start: Vector4<f64>, max_iter: usize) -> (Vector4<f64>, f64) {
    let mut w = start;
    let mut value = lik.value(&w);
    for _ in 0..max_iter {
        let local = lik.evaluate(&w);
        let g = Vector2::new(local.gradient[0], local.gradient[1]);
        if g.norm() < 1e-12 {
            break;
        }
        let h = Matrix2::new(local.hessian[(0, 0)], local.hessian[(0, 1)], local.hessian[(1, 0)], local.hessian[(1, 1)]);
        let step = match (-h).cholesky() {
            Some(c) => c.solve(&g),
            None => g / (h.norm() + 1.0),
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = w + Vector4::new(t * step[0], t * step[1], 0.0, 0.0);
            let v = lik.value(&trial);
            if v >= value + 1e-4 * t * g.dot(&step) {
                w = trial;
                value = v;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let g = lik.gradient(&w);
    (w, g[0].hypot(g[1]))
}

/// Evaluates the log-likelihood of one synthesized instance on a square grid
/// centred at `truth + grid.center`. The geometry is redrawn if singular.
pub fn run_contour(cfg: &ExperimentConfig) -> Result<ContourGrid> {
    let grid: Grid = cfg.grid.ok_or_else(|| Error::InvalidInput("contour needs a grid".into()))?;
    let s = cfg.sat_counts[0];
    let mut rng = substream(cfg.seed, &[tag::CONTOUR, s as u64]);
    let (g, _, _) = sample_regular_geometry(&mut rng, s)?;
    let truth = ParameterVector::zero();
    let draws = NoiseDraws::sample(&mut rng, s, &cfg.nm);
    let ms = MeasurementSet::assemble(&g, &truth, &cfg.nm, draws)?;
    let lik = Likelihood::new(&g, &ms.pseudo, &ms.carrier, &cfg.nm);

    let tv = truth.to_vector();
    let w1: Vec<f64> = grid.axis(0).iter().map(|x| x + tv[0]).collect();
    let w2: Vec<f64> = grid.axis(1).iter().map(|x| x + tv[1]).collect();
    let values: Vec<Vec<f64>> = crate::parallel::map_indexed(w1.len(), |i| {
        w2.iter().map(|&b| lik.value(&Vector4::new(w1[i], b, tv[2], tv[3]))).collect()
    });

    let (mut bi, mut bj) = (0, 0);
    for (i, row) in values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v > values[bi][bj] {
                (bi, bj) = (i, j);
            }
        }
    }
    let start = Vector4::new(w1[bi], w2[bj], tv[2], tv[3]);
    let (p, gn) = polish_stationary_2d(&lik, start, 200);
    Ok(ContourGrid {
        truth,
        local_maxima: count_local_maxima(&values),
        grid_argmax: [w1[bi], w2[bj]],
        polished: [p[0], p[1]],
        polished_gradient_norm: gn,
        w1,
        w2,
        values,
    })
}
