use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ife::{fit_ife, project_loadings};
use super::GscError;

/// Cross-validated factor number with the score of every candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSelection {
    pub r: usize,
    /// Mean post-period MSPE of held-out donors, indexed by r; infinite when
    /// some fold could not be fitted at that rank.
    pub cv_mspe: Vec<f64>,
}

/// Post-period MSPE of `held` predicted from a model fit on the other donors.
fn fold_score(y: &DMatrix<f64>, held: usize, n_pre: usize, r: usize) -> f64 {
    let rows: Vec<usize> = (0..y.nrows()).filter(|&i| i != held).collect();
    let train = y.select_rows(&rows);
    let Ok(model) = fit_ife(&train, r) else { return f64::INFINITY };
    let series: Vec<f64> = y.row(held).iter().copied().collect();
    let Ok(proj) = project_loadings(&model, &series[..n_pre]) else { return f64::INFINITY };
    let cf = model.counterfactual(&proj);
    let post = series.len() - n_pre;
    (n_pre..series.len()).map(|t| (series[t] - cf[t]).powi(2)).sum::<f64>() / post as f64
}

/// Leave-one-donor-out cross-validation over `r = 0..=r_max` on a donor
/// matrix (J × T) whose first `n_pre` columns are pre-treatment.
pub fn select_factors(donors: &DMatrix<f64>, n_pre: usize, r_max: usize) -> Result<FactorSelection, GscError> {
    let (j, t) = donors.shape();
    if r_max + 1 >= j.min(t) {
        return Err(GscError::InvalidFactorRange { r_max, limit: j.min(t).saturating_sub(2) });
    }
    if n_pre == 0 || n_pre >= t {
        return Err(GscError::InsufficientPrePeriods { needed: 1, got: n_pre });
    }
    let cv_mspe: Vec<f64> = (0..=r_max)
        .map(|r| {
            let scores: Vec<f64> = (0..j).into_par_iter().map(|u| fold_score(donors, u, n_pre, r)).collect();
            scores.iter().sum::<f64>() / j as f64
        })
        .collect();
    let mut r = 0;
    for (k, &s) in cv_mspe.iter().enumerate() {
        if s < cv_mspe[r] * (1.0 - 1e-12) {
            r = k;
        }
    }
    Ok(FactorSelection { r, cv_mspe })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_max_zero_returns_zero() {
        let y = DMatrix::from_fn(6, 10, |i, t| (i * t) as f64 * 0.01 + ((i + t) as f64).sin());
        assert_eq!(select_factors(&y, 6, 0).unwrap().r, 0);
        assert!(matches!(select_factors(&y, 6, 5), Err(GscError::InvalidFactorRange { .. })));
    }

    #[test]
    fn noiseless_single_factor_is_found() {
        let y = DMatrix::from_fn(10, 20, |i, t| {
            (i as f64) + 0.3 * t as f64 + (1.0 + i as f64 * 0.4) * ((t as f64) * 0.9).sin()
        });
        let sel = select_factors(&y, 12, 3).unwrap();
        assert_eq!(sel.r, 1, "{:?}", sel.cv_mspe);
    }
}
