use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ScmError;
use crate::panel::BalancedPanel;

/// Which pre-treatment quantities the weights are matched on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorSpec {
    /// One predictor per pre-treatment year of the target outcome.
    #[default]
    AllPreLags,
    Custom { entries: Vec<PredictorEntry> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorEntry {
    /// Defaults to the outcome being fitted.
    #[serde(default)]
    pub outcome: Option<String>,
    /// Pre-treatment years to use; all of them when absent.
    #[serde(default)]
    pub periods: Option<Vec<i32>>,
    #[serde(default)]
    pub aggregation: Aggregation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// One predictor row per selected year.
    #[default]
    Each,
    /// A single row holding the mean over the selected years.
    Mean,
}

/// Treated predictors `x1` (k) and donor predictors `x0` (k × J).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorMatrices {
    pub x1: DVector<f64>,
    pub x0: DMatrix<f64>,
    pub labels: Vec<String>,
    pub donors: Vec<String>,
}

impl PredictorMatrices {
    pub fn new(
        x1: DVector<f64>,
        x0: DMatrix<f64>,
        labels: Vec<String>,
        donors: Vec<String>,
    ) -> Result<Self, ScmError> {
        let (k, j) = x0.shape();
        if k == 0 || x1.is_empty() {
            return Err(ScmError::EmptyPredictorSet);
        }
        if x1.len() != k || labels.len() != k || donors.len() != j || j < 2 {
            return Err(ScmError::DimensionMismatch(format!(
                "x1 {} / x0 {k}x{j} / {} labels / {} donors",
                x1.len(),
                labels.len(),
                donors.len()
            )));
        }
        if x1.iter().chain(x0.iter()).any(|v| !v.is_finite()) {
            return Err(ScmError::NonFinite);
        }
        Ok(Self { x1, x0, labels, donors })
    }

    pub fn k(&self) -> usize {
        self.x0.nrows()
    }

    pub fn n_donors(&self) -> usize {
        self.x0.ncols()
    }

    /// Per-row donor-pool sample SD; rows with no donor spread keep scale 1.
    pub fn row_scales(&self) -> Vec<f64> {
        let j = self.n_donors() as f64;
        self.x0
            .row_iter()
            .map(|row| {
                let mean = row.mean();
                let sd = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (j - 1.0)).sqrt();
                if sd > 1e-12 * mean.abs().max(1.0) {
                    sd
                } else {
                    1.0
                }
            })
            .collect()
    }

    /// Copy with every row divided by its donor-pool SD.
    pub fn standardized(&self) -> Self {
        let scales = self.row_scales();
        let mut out = self.clone();
        for (i, s) in scales.iter().enumerate() {
            out.x1[i] /= s;
            out.x0.row_mut(i).apply(|v| *v /= s);
        }
        out
    }
}

pub fn build_predictors(
    panel: &BalancedPanel,
    outcome: &str,
    spec: &PredictorSpec,
) -> Result<PredictorMatrices, ScmError> {
    let pre = panel.pre_period();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    match spec {
        PredictorSpec::AllPreLags => {
            let m = panel.matrix(outcome)?;
            for (t, year) in pre.iter().enumerate() {
                rows.push(m.column(t).iter().copied().collect());
                labels.push(year.to_string());
            }
        }
        PredictorSpec::Custom { entries } => {
            for e in entries {
                let name = e.outcome.as_deref().unwrap_or(outcome);
                let m = panel.matrix(name)?;
                let years: Vec<i32> = e.periods.clone().unwrap_or_else(|| pre.to_vec());
                let cols = years
                    .iter()
                    .map(|&y| {
                        if y > panel.t0() {
                            return Err(ScmError::PredictorOutsidePre(y));
                        }
                        panel.period_index(y).ok_or(ScmError::PredictorOutsidePre(y))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                match e.aggregation {
                    Aggregation::Each => {
                        for (&c, y) in cols.iter().zip(&years) {
                            rows.push(m.column(c).iter().copied().collect());
                            labels.push(format!("{name}@{y}"));
                        }
                    }
                    Aggregation::Mean if !cols.is_empty() => {
                        let n = cols.len() as f64;
                        rows.push(
                            (0..m.nrows())
                                .map(|u| cols.iter().map(|&c| m[(u, c)]).sum::<f64>() / n)
                                .collect(),
                        );
                        let (lo, hi) = (years.iter().min().unwrap(), years.iter().max().unwrap());
                        labels.push(format!("{name}:mean({lo}-{hi})"));
                    }
                    Aggregation::Mean => {}
                }
            }
        }
    }
    if rows.is_empty() {
        return Err(ScmError::EmptyPredictorSet);
    }
    let k = rows.len();
    let j = panel.n_units() - 1;
    let x1 = DVector::from_fn(k, |i, _| rows[i][0]);
    let x0 = DMatrix::from_fn(k, j, |i, d| rows[i][d + 1]);
    PredictorMatrices::new(x1, x0, labels, panel.donors().to_vec())
}
