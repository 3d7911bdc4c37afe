//! Outer search over diagonal V by pre-treatment outcome MSPE.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::predictors::PredictorMatrices;
use super::solver::{min_norm_point, scaled_points, VMatrix, WeightVector};
use super::ScmError;
use crate::panel::BalancedPanel;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct VSearchOptions {
    /// Nelder-Mead starts; the first starts at uniform V, the rest at seeded random points.
    pub restarts: usize,
    /// Objective evaluations allowed per start.
    pub max_evals: usize,
    pub seed: u64,
}

impl Default for VSearchOptions {
    fn default() -> Self {
        Self { restarts: 20, max_evals: 1000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VSearchResult {
    pub v: VMatrix,
    pub weights: WeightVector,
    /// Mean over pre-treatment periods of the squared outcome gap.
    pub mspe: f64,
    pub evaluations: usize,
}

/// Scores candidate V by the pre-treatment MSPE of the implied weights.
struct MspeObjective {
    centered: DMatrix<f64>,
    x1: DVector<f64>,
    y1_pre: DVector<f64>,
    y0_pre: DMatrix<f64>,
}

impl MspeObjective {
    fn eval(&self, v: &[f64]) -> Result<(f64, Vec<f64>), ScmError> {
        let points = scaled_points(&self.centered, &self.x1, v);
        let sol = min_norm_point(&points)?;
        let synth = &self.y0_pre * DVector::from_column_slice(&sol.weights);
        let mspe = (&self.y1_pre - synth).norm_squared() / self.y1_pre.len() as f64;
        Ok((mspe, sol.weights))
    }
}

/// `v = softmax(0, θ)`: a (k−1)-dimensional unconstrained parameterization.
fn softmax_v(theta: &[f64]) -> Vec<f64> {
    let max = theta.iter().cloned().fold(0.0, f64::max);
    let mut v: Vec<f64> = std::iter::once(0.0)
        .chain(theta.iter().copied())
        .map(|t| (t - max).exp())
        .collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

pub fn optimize_v(
    panel: &BalancedPanel,
    outcome: &str,
    pred: &PredictorMatrices,
    opts: &VSearchOptions,
) -> Result<VSearchResult, ScmError> {
    let m = panel.matrix(outcome)?;
    let n_pre = panel.n_pre();
    let j = panel.n_units() - 1;
    if pred.n_donors() != j {
        return Err(ScmError::DimensionMismatch(format!(
            "{} predictor donors for {} panel donors",
            pred.n_donors(),
            j
        )));
    }
    let std = pred.standardized();
    let obj = MspeObjective {
        centered: std.x0.clone(),
        x1: std.x1.clone(),
        y1_pre: DVector::from_fn(n_pre, |t, _| m[(0, t)]),
        y0_pre: DMatrix::from_fn(n_pre, j, |t, d| m[(d + 1, t)]),
    };
    let k = pred.k();
    // MSPE at rounding level counts as an exact fit
    let floor = 1e-24 * (obj.y1_pre.norm_squared() / n_pre as f64).max(f64::MIN_POSITIVE);

    let mut evaluations = 0;
    let mut failure: Option<ScmError> = None;
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut score = |theta: &[f64], best: &mut Option<(f64, Vec<f64>, Vec<f64>)>| -> f64 {
        evaluations += 1;
        let v = softmax_v(theta);
        match obj.eval(&v) {
            Ok((mspe, w)) => {
                if best.as_ref().is_none_or(|b| mspe < b.0) {
                    *best = Some((mspe, v, w));
                }
                mspe
            }
            Err(e) => {
                failure.get_or_insert(e);
                f64::INFINITY
            }
        }
    };

    let uniform = vec![0.0; k.saturating_sub(1)];
    score(&uniform, &mut best);
    if k > 1 {
        for r in 0..opts.restarts {
            let start: Vec<f64> = if r == 0 {
                uniform.clone()
            } else {
                let mut g = rng::stream(opts.seed, "v-search", r as u64);
                (0..k - 1).map(|_| StandardNormal.sample(&mut g)).collect()
            };
            if best.as_ref().is_some_and(|b| b.0 <= floor) {
                break;
            }
            nelder_mead(|t| score(t, &mut best), &start, 1.0, opts.max_evals, 1e-10, floor);
            if best.as_ref().is_some_and(|b| b.0 <= floor) {
                break;
            }
        }
    }
    match best {
        Some((mspe, v, w)) => Ok(VSearchResult {
            v: VMatrix { diagonal: v },
            weights: WeightVector { donors: pred.donors.clone(), weights: w },
            mspe,
            evaluations,
        }),
        None => Err(failure.unwrap_or(ScmError::NumericalFailure { iterations: 0, gap: f64::NAN })),
    }
}

/// Minimize `f` from `start`; stops when the simplex values agree to `ftol`
/// (relative) plus `fatol` (absolute). Returns the best point and value.
pub(crate) fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    start: &[f64],
    step: f64,
    max_evals: usize,
    ftol: f64,
    fatol: f64,
) -> (Vec<f64>, f64) {
    let n = start.len();
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..n {
        let mut p = start.to_vec();
        p[i] += step;
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| f(p)).collect();
    let mut evals = n + 1;
    while evals < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let (lo, hi) = (values[0], values[n]);
        if !lo.is_finite() && !hi.is_finite() {
            break;
        }
        if (hi - lo).abs() <= ftol * (lo.abs() + hi.abs()) + fatol {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|d| simplex[..n].iter().map(|p| p[d]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (w - c)).collect()
        };
        let reflected = along(-1.0);
        let fr = f(&reflected);
        evals += 1;
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            evals += 1;
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let (contracted, fc) = if fr < values[n] {
                let c = along(-0.5);
                let fc = f(&c);
                (c, fc)
            } else {
                let c = along(0.5);
                let fc = f(&c);
                (c, fc)
            };
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                let best = simplex[0].clone();
                for i in 1..=n {
                    simplex[i] = best.iter().zip(&simplex[i]).map(|(b, p)| b + 0.5 * (p - b)).collect();
                    values[i] = f(&simplex[i]);
                }
                evals += n;
            }
        }
    }
    let i = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    (simplex[i].clone(), values[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let (x, fx) = nelder_mead(
            |p| (p[0] - 1.0).powi(2) + 3.0 * (p[1] + 2.0).powi(2),
            &[0.0, 0.0],
            1.0,
            2000,
            1e-14,
            0.0,
        );
        assert!(fx < 1e-10);
        assert!((x[0] - 1.0).abs() < 1e-4 && (x[1] + 2.0).abs() < 1e-4);
    }

    #[test]
    fn softmax_parameterization() {
        let v = softmax_v(&[0.0, 0.0, 0.0]);
        assert!(v.iter().all(|x| (x - 0.25).abs() < 1e-15));
        let v = softmax_v(&[800.0]);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(v[1] > 0.999);
    }
}
