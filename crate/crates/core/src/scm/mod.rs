//! Synthetic control estimator.
//!
//! Weights solve a V-weighted simplex least-squares problem on the
//! predictors; V is chosen to minimize the pre-treatment outcome MSPE of the
//! resulting synthetic unit. The pre-treatment MSPE divides by the number of
//! pre-treatment periods.

mod predictors;
mod solver;
mod vsearch;

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use predictors::{build_predictors, Aggregation, PredictorEntry, PredictorMatrices, PredictorSpec};
pub use solver::{solve_weights, weighted_loss, VMatrix, WeightVector, MAX_ITERATIONS, OBJECTIVE_TOL};
pub use vsearch::{optimize_v, VSearchOptions, VSearchResult};

use crate::panel::{BalancedPanel, PanelError};
use crate::placebo::EffectSummary;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScmError {
    #[error("predictor set is empty")]
    EmptyPredictorSet,
    #[error("predictor period {0} is not a pre-treatment period")]
    PredictorOutsidePre(i32),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite predictor value")]
    NonFinite,
    #[error("V must be non-negative with a positive sum")]
    InvalidV,
    #[error("weight solver did not converge after {iterations} iterations (gap {gap:e})")]
    NumericalFailure { iterations: usize, gap: f64 },
    #[error("empty period set")]
    EmptyPeriodSet,
    #[error("treated pre-treatment series has zero variance")]
    ZeroVarianceTreated,
    #[error("no post-treatment periods")]
    NoPostPeriods,
    #[error(transparent)]
    Panel(#[from] PanelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub rmspe_pre: f64,
    /// Absent when no donor paths are available (e.g. transcribed tables).
    pub avg_control_bias_pct: Option<f64>,
    pub sc_bias_pct: f64,
    pub r2_pre: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmFit {
    pub outcome: String,
    pub treated_unit: String,
    pub t0: i32,
    pub periods: Vec<i32>,
    pub predictor_labels: Vec<String>,
    pub weights: WeightVector,
    pub v: VMatrix,
    pub treated_series: Vec<f64>,
    pub synthetic_series: Vec<f64>,
    pub gap_series: Vec<f64>,
    pub diagnostics: FitDiagnostics,
    /// Reporting notes, e.g. non-unique weights from duplicated donors.
    pub notes: Vec<String>,
}

impl ScmFit {
    pub fn n_pre(&self) -> usize {
        self.periods.iter().filter(|&&p| p <= self.t0).count()
    }

    pub fn pre_gaps(&self) -> &[f64] {
        &self.gap_series[..self.n_pre()]
    }

    pub fn post_gaps(&self) -> &[f64] {
        &self.gap_series[self.n_pre()..]
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    /// `period,treated,synthetic,gap` rows.
    pub fn write_gap_csv<W: Write>(&self, sink: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["period", "treated", "synthetic", "gap"])?;
        for (i, p) in self.periods.iter().enumerate() {
            w.write_record([
                p.to_string(),
                self.treated_series[i].to_string(),
                self.synthetic_series[i].to_string(),
                self.gap_series[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Options for one fit: predictor spec plus V-search configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct FitOptions {
    pub predictors: PredictorSpec,
    pub v_search: VSearchOptions,
}

pub fn fit(panel: &BalancedPanel, outcome: &str, opts: &FitOptions) -> Result<ScmFit, ScmError> {
    let pred = build_predictors(panel, outcome, &opts.predictors)?;
    let found = optimize_v(panel, outcome, &pred, &opts.v_search)?;
    let m = panel.matrix(outcome)?;
    let w = DVector::from_column_slice(&found.weights.weights);
    let donors = m.rows(1, m.nrows() - 1);
    let synthetic: Vec<f64> = (donors.transpose() * &w).iter().copied().collect();
    let treated: Vec<f64> = m.row(0).iter().copied().collect();
    let gaps: Vec<f64> = treated.iter().zip(&synthetic).map(|(y, s)| y - s).collect();

    let n_pre = panel.n_pre();
    let donor_mean: Vec<f64> = (0..n_pre).map(|t| donors.column(t).mean()).collect();
    let diagnostics =
        fit_diagnostics(&treated[..n_pre], &synthetic[..n_pre], Some(&donor_mean))?;

    let mut notes = Vec::new();
    for a in 0..pred.n_donors() {
        for b in a + 1..pred.n_donors() {
            if pred.x0.column(a) == pred.x0.column(b) {
                notes.push(format!(
                    "donors `{}` and `{}` have identical predictors; their weight split is not unique",
                    pred.donors[a], pred.donors[b]
                ));
            }
        }
    }

    Ok(ScmFit {
        outcome: outcome.to_string(),
        treated_unit: panel.treated_unit().to_string(),
        t0: panel.t0(),
        periods: panel.periods().to_vec(),
        predictor_labels: pred.labels,
        weights: found.weights,
        v: found.v,
        treated_series: treated,
        synthetic_series: synthetic,
        gap_series: gaps,
        diagnostics,
        notes,
    })
}

/// Root mean squared value of `gaps`.
pub fn rmspe(gaps: &[f64]) -> Result<f64, ScmError> {
    if gaps.is_empty() {
        return Err(ScmError::EmptyPeriodSet);
    }
    Ok((gaps.iter().map(|g| g * g).sum::<f64>() / gaps.len() as f64).sqrt())
}

/// Pre-treatment path-imbalance statistics from treated, synthetic and
/// (optionally) unweighted donor-mean paths over the pre-treatment window.
pub fn fit_diagnostics(
    treated: &[f64],
    synthetic: &[f64],
    donor_mean: Option<&[f64]>,
) -> Result<FitDiagnostics, ScmError> {
    if treated.len() != synthetic.len() || donor_mean.is_some_and(|d| d.len() != treated.len()) {
        return Err(ScmError::DimensionMismatch("pre-treatment path lengths differ".into()));
    }
    let gaps: Vec<f64> = treated.iter().zip(synthetic).map(|(y, s)| y - s).collect();
    let rmspe_pre = rmspe(&gaps)?;
    let bias_pct = |other: &[f64]| {
        100.0 * treated.iter().zip(other).map(|(y, s)| (y - s).abs() / y.abs()).sum::<f64>()
            / treated.len() as f64
    };
    let ssr: f64 = gaps.iter().map(|g| g * g).sum();
    let mean = treated.iter().sum::<f64>() / treated.len() as f64;
    let sst: f64 = treated.iter().map(|y| (y - mean).powi(2)).sum();
    if sst == 0.0 {
        return Err(ScmError::ZeroVarianceTreated);
    }
    Ok(FitDiagnostics {
        rmspe_pre,
        avg_control_bias_pct: donor_mean.map(bias_pct),
        sc_bias_pct: if ssr == 0.0 { 0.0 } else { bias_pct(synthetic) },
        r2_pre: if ssr == 0.0 { 1.0 } else { 1.0 - ssr / sst },
    })
}

/// Average and end-of-sample post-treatment gaps; inference fields left empty.
pub fn effect_summary(fit: &ScmFit) -> Result<EffectSummary, ScmError> {
    let post = fit.post_gaps();
    if post.is_empty() {
        return Err(ScmError::NoPostPeriods);
    }
    let n = post.len() as f64;
    let mean = post.iter().sum::<f64>() / n;
    let sd = if post.len() > 1 {
        (post.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(EffectSummary {
        average_effect: mean,
        gap_sd: sd,
        end_of_sample_effect: post[post.len() - 1],
        ci: None,
        p_value: None,
        verdict: None,
    })
}
