//! Outcome transforms and the first-principal-component composite index.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{BalancedPanel, PanelError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("non-positive value {value} at position {position} under a log transform")]
    NonPositiveValue { position: usize, value: f64 },
    #[error("non-positive value {value} for unit `{unit}` in {period} under a log transform")]
    NonPositiveAt { unit: String, period: i32, value: f64 },
    #[error("column {0} has zero variance")]
    ZeroVarianceColumn(usize),
    #[error("need at least 2 indicators, got {0}")]
    TooFewIndicators(usize),
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("correlation matrix is degenerate")]
    DegenerateCovariance,
    #[error("normalization base must be positive, got {0}")]
    InvalidBase(f64),
    #[error(transparent)]
    Panel(#[from] PanelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    #[default]
    Identity,
    Log,
    /// Natural log of the level, optionally relative to `base`.
    LogNormalized,
    Zscore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct TransformSpec {
    pub kind: TransformKind,
    /// Reference level for `log_normalized`: `ln(x / base)`.
    pub base: Option<f64>,
    /// Added before taking logs. `None` rejects non-positive inputs.
    pub offset: Option<f64>,
}

impl TransformSpec {
    pub fn new(kind: TransformKind) -> Self {
        Self { kind, ..Self::default() }
    }
}

pub fn apply_transform(series: &[f64], spec: &TransformSpec) -> Result<Vec<f64>, TransformError> {
    let log_all = |shift: f64, scale: f64| {
        series
            .iter()
            .enumerate()
            .map(|(position, &x)| {
                let v = x + shift;
                if v > 0.0 {
                    Ok((v / scale).ln())
                } else {
                    Err(TransformError::NonPositiveValue { position, value: x })
                }
            })
            .collect()
    };
    let offset = spec.offset.unwrap_or(0.0);
    match spec.kind {
        TransformKind::Identity => Ok(series.to_vec()),
        TransformKind::Log => log_all(offset, 1.0),
        TransformKind::LogNormalized => {
            let base = spec.base.unwrap_or(1.0);
            if base <= 0.0 || !base.is_finite() {
                return Err(TransformError::InvalidBase(base));
            }
            log_all(offset, base)
        }
        TransformKind::Zscore => {
            let col = DMatrix::from_column_slice(series.len(), 1, series);
            Ok(zscore_columns(&col)?.column(0).iter().copied().collect())
        }
    }
}

/// Apply `spec` to every unit's series of `outcome`.
pub fn transform_outcome(
    panel: &BalancedPanel,
    outcome: &str,
    spec: &TransformSpec,
) -> Result<BalancedPanel, TransformError> {
    let m = panel.matrix(outcome)?;
    let mut out = m.clone();
    for (i, unit) in panel.units().iter().enumerate() {
        let row: Vec<f64> = m.row(i).iter().copied().collect();
        let t = apply_transform(&row, spec).map_err(|e| match e {
            TransformError::NonPositiveValue { position, value } => TransformError::NonPositiveAt {
                unit: unit.clone(),
                period: panel.periods()[position],
                value,
            },
            other => other,
        })?;
        for (c, v) in t.into_iter().enumerate() {
            out[(i, c)] = v;
        }
    }
    Ok(panel.with_outcome(outcome, out))
}

/// Standardize each column to sample mean 0 and sample SD 1 (n − 1 denominator).
pub fn zscore_columns(matrix: &DMatrix<f64>) -> Result<DMatrix<f64>, TransformError> {
    let n = matrix.nrows();
    if n < 2 {
        return Err(TransformError::TooFewObservations { needed: 2, got: n });
    }
    let mut out = matrix.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let mean = col.mean();
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        if !(sd > 1e-14 * mean.abs().max(1.0)) {
            return Err(TransformError::ZeroVarianceColumn(j));
        }
        col.apply(|x| *x = (*x - mean) / sd);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipalComponentResult {
    /// One score per input row.
    pub scores: Vec<f64>,
    /// Unit-norm loading per indicator.
    pub loadings: Vec<f64>,
    pub explained_variance_ratio: f64,
}

/// First principal component of the correlation matrix of `indicators`
/// (rows are observations, columns are indicators).
pub fn first_principal_component(
    indicators: &DMatrix<f64>,
) -> Result<PrincipalComponentResult, TransformError> {
    let (n, k) = indicators.shape();
    if k < 2 {
        return Err(TransformError::TooFewIndicators(k));
    }
    if n < k + 1 {
        return Err(TransformError::TooFewObservations { needed: k + 1, got: n });
    }
    let z = zscore_columns(indicators)?;
    let corr = (z.transpose() * &z) / (n - 1) as f64;
    let eig = SymmetricEigen::new(corr);
    let (top, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(TransformError::DegenerateCovariance)?;
    if !(lambda > 1e-12) {
        return Err(TransformError::DegenerateCovariance);
    }
    let mut loadings: DVector<f64> = eig.eigenvectors.column(top).into_owned();
    loadings /= loadings.norm();
    let total: f64 = loadings.sum();
    let flip = if total.abs() > 1e-12 {
        total < 0.0
    } else {
        loadings.iter().find(|v| v.abs() > 1e-12).is_some_and(|&v| v < 0.0)
    };
    if flip {
        loadings.neg_mut();
    }
    let scores = &z * &loadings;
    Ok(PrincipalComponentResult {
        scores: scores.iter().copied().collect(),
        loadings: loadings.iter().copied().collect(),
        explained_variance_ratio: (lambda / k as f64).min(1.0),
    })
}

/// Pool every unit-period of `indicators`, fit one loading vector, and add
/// the score series to the panel as outcome `name`.
pub fn principal_component_index(
    panel: &BalancedPanel,
    indicators: &[String],
    name: &str,
) -> Result<(PrincipalComponentResult, BalancedPanel), TransformError> {
    let (nu, nt) = (panel.n_units(), panel.periods().len());
    let mats = indicators
        .iter()
        .map(|o| panel.matrix(o))
        .collect::<Result<Vec<_>, _>>()?;
    // row index = unit * nt + period
    let pooled = DMatrix::from_fn(nu * nt, mats.len(), |r, c| mats[c][(r / nt, r % nt)]);
    let pc = first_principal_component(&pooled)?;
    let scores = DMatrix::from_fn(nu, nt, |i, t| pc.scores[i * nt + t]);
    Ok((pc, panel.with_outcome(name, scores)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, FRAC_1_SQRT_2};

    #[test]
    fn identity_and_log() {
        let s = [1.5, -2.0, 3.0];
        assert_eq!(apply_transform(&s, &TransformSpec::default()).unwrap(), s);
        let l = apply_transform(&[E, E * E], &TransformSpec::new(TransformKind::Log)).unwrap();
        assert!((l[0] - 1.0).abs() < 1e-15 && (l[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn log_normalized_level() {
        let v = apply_transform(&[2191.8], &TransformSpec::new(TransformKind::LogNormalized)).unwrap();
        assert!((v[0] - 7.6925).abs() < 5e-5, "{}", v[0]);
        assert!((v[0] - 7.69).abs() < 0.005);
        let based = TransformSpec { kind: TransformKind::LogNormalized, base: Some(2191.8), offset: None };
        assert!(apply_transform(&[2191.8], &based).unwrap()[0].abs() < 1e-15);
    }

    #[test]
    fn non_positive_rejected_unless_offset() {
        let spec = TransformSpec::new(TransformKind::Log);
        assert_eq!(
            apply_transform(&[1.0, 0.0], &spec).unwrap_err(),
            TransformError::NonPositiveValue { position: 1, value: 0.0 }
        );
        let shifted = TransformSpec { offset: Some(1.0), ..spec };
        assert_eq!(apply_transform(&[0.0], &shifted).unwrap(), vec![0.0]);
    }

    #[test]
    fn log_inverts_exp() {
        let xs: Vec<f64> = (0..50).map(|i| -3.0 + 0.17 * i as f64).collect();
        let e: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
        let back = apply_transform(&e, &TransformSpec::new(TransformKind::Log)).unwrap();
        for (a, b) in xs.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zscore_examples() {
        let m = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let z = zscore_columns(&m).unwrap();
        assert_eq!(z.column(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 0.0, 1.0]);
        let m = DMatrix::from_column_slice(5, 1, &[0.3, 9.0, -2.0, 4.4, 1.0]);
        let z1 = zscore_columns(&m).unwrap();
        let z2 = zscore_columns(&z1).unwrap();
        assert!((z1 - z2).amax() < 1e-12);
        let c = DMatrix::from_element(4, 1, 2.0);
        assert_eq!(zscore_columns(&c).unwrap_err(), TransformError::ZeroVarianceColumn(0));
    }

    #[test]
    fn pca_identical_columns() {
        let x = [1.0, 4.0, 2.0, 8.0, 5.0];
        let m = DMatrix::from_fn(5, 2, |i, _| x[i]);
        let pc = first_principal_component(&m).unwrap();
        assert!((pc.explained_variance_ratio - 1.0).abs() < 1e-12);
        assert!((pc.loadings[0] - FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((pc.loadings[1] - FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn pca_anticorrelated_columns() {
        let x = [1.0, 4.0, 2.0, 8.0, 5.0];
        let m = DMatrix::from_fn(5, 2, |i, j| if j == 0 { x[i] } else { -x[i] });
        let pc = first_principal_component(&m).unwrap();
        assert!((pc.explained_variance_ratio - 1.0).abs() < 1e-12);
        assert!((pc.loadings[0] - FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((pc.loadings[1] + FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn pca_argument_errors() {
        let m = DMatrix::from_element(5, 1, 1.0);
        assert_eq!(first_principal_component(&m).unwrap_err(), TransformError::TooFewIndicators(1));
        let m = DMatrix::from_fn(2, 2, |i, j| (i + j) as f64);
        assert!(matches!(
            first_principal_component(&m),
            Err(TransformError::TooFewObservations { needed: 3, got: 2 })
        ));
    }
}
