//! Generalized synthetic control.
//!
//! An interactive fixed-effects model is estimated on donors only; the
//! treated unit's loadings and offset are projected from its pre-treatment
//! path, and the effect path is the treated series minus the implied
//! counterfactual.

mod bootstrap;
mod ife;
mod select;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bootstrap::{bootstrap_ci, BootstrapConfig, BootstrapResult, BootstrapScheme};
pub use ife::{fit_ife, project_loadings, FactorModel, TreatedProjection, CONVERGENCE_TOL, MAX_ALS_ITERATIONS};
pub use select::{select_factors, FactorSelection};

use crate::panel::{BalancedPanel, PanelError};
use crate::placebo::Interval;
use crate::stats;

/// In-time p-values below this flag a likely anticipation effect.
pub const ANTICIPATION_ALPHA: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GscError {
    #[error("factor iterations did not converge after {iterations} iterations (last change {change:e})")]
    NonConvergence { iterations: usize, change: f64 },
    #[error("rank {r} exceeds the rank supported by the data (singular value {singular_value:e})")]
    RankDeficient { r: usize, singular_value: f64 },
    #[error("pre-period factors are collinear; loadings are not identified")]
    CollinearFactors,
    #[error("need more than {needed} pre-treatment periods, found {got}")]
    InsufficientPrePeriods { needed: usize, got: usize },
    #[error("r_max = {r_max} too large; at most {limit} for this panel")]
    InvalidFactorRange { r_max: usize, limit: usize },
    #[error("invalid bootstrap configuration: {0}")]
    InvalidBootstrap(String),
    #[error("bootstrap could not draw enough distinct donors ({redraws} redraws)")]
    DegenerateResample { redraws: usize },
    #[error("non-finite value in outcome matrix")]
    NonFinite,
    #[error(transparent)]
    Panel(#[from] PanelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorCount {
    Fixed(usize),
    /// Cross-validate over `0..=r_max`.
    Auto { r_max: usize },
}

impl Default for FactorCount {
    fn default() -> Self {
        FactorCount::Auto { r_max: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttPoint {
    pub period: i32,
    pub att: f64,
    pub ci: Option<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GscFit {
    pub outcome: String,
    pub treated_unit: String,
    pub t0: i32,
    pub periods: Vec<i32>,
    pub r: usize,
    pub selection: Option<FactorSelection>,
    pub model: FactorModel,
    pub treated: TreatedProjection,
    pub treated_series: Vec<f64>,
    pub counterfactual_series: Vec<f64>,
    pub att_path: Vec<AttPoint>,
    pub average_att: f64,
    pub average_ci: Option<Interval>,
    pub p_value: Option<f64>,
    pub bootstrap: Option<BootstrapSummary>,
}

/// Bootstrap settings and bookkeeping carried into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub scheme: BootstrapScheme,
    pub replications: usize,
    pub level: f64,
    pub redraws: usize,
}

impl GscFit {
    pub fn n_pre(&self) -> usize {
        self.periods.iter().filter(|&&p| p <= self.t0).count()
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    /// Plot data `period,treated,counterfactual,att,ci_low,ci_high`; effect
    /// columns are empty before treatment.
    pub fn write_csv<W: Write>(&self, sink: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["period", "treated", "counterfactual", "att", "ci_low", "ci_high"])?;
        let n_pre = self.n_pre();
        for (i, p) in self.periods.iter().enumerate() {
            let point = i.checked_sub(n_pre).map(|k| &self.att_path[k]);
            let ci = point.and_then(|a| a.ci);
            w.write_record([
                p.to_string(),
                self.treated_series[i].to_string(),
                self.counterfactual_series[i].to_string(),
                point.map(|a| a.att.to_string()).unwrap_or_default(),
                ci.map(|c| c.low.to_string()).unwrap_or_default(),
                ci.map(|c| c.high.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn gsc_fit(
    panel: &BalancedPanel,
    outcome: &str,
    factors: FactorCount,
    boot: Option<&BootstrapConfig>,
) -> Result<GscFit, GscError> {
    let m = panel.matrix(outcome)?;
    let n_pre = panel.n_pre();
    let series: Vec<f64> = m.row(0).iter().copied().collect();
    let donors = m.rows(1, m.nrows() - 1).into_owned();
    let (r, selection) = match factors {
        FactorCount::Fixed(r) => (r, None),
        FactorCount::Auto { r_max } => {
            let sel = select_factors(&donors, n_pre, r_max)?;
            (sel.r, Some(sel))
        }
    };
    if n_pre <= r + 1 {
        return Err(GscError::InsufficientPrePeriods { needed: r + 1, got: n_pre });
    }
    let model = fit_ife(&donors, r)?;
    let treated = project_loadings(&model, &series[..n_pre])?;
    let counterfactual_series = model.counterfactual(&treated);
    let att: Vec<f64> = series[n_pre..]
        .iter()
        .zip(&counterfactual_series[n_pre..])
        .map(|(y, c)| y - c)
        .collect();
    let average_att = stats::mean(&att);
    let boot = boot
        .map(|cfg| bootstrap_ci(&donors, &series, n_pre, r, &att, cfg))
        .transpose()?;
    let att_path = panel
        .post_period()
        .iter()
        .enumerate()
        .map(|(k, &period)| AttPoint { period, att: att[k], ci: boot.as_ref().map(|b| b.per_period[k]) })
        .collect();
    Ok(GscFit {
        outcome: outcome.to_string(),
        treated_unit: panel.treated_unit().to_string(),
        t0: panel.t0(),
        periods: panel.periods().to_vec(),
        r,
        selection,
        model,
        treated,
        treated_series: series,
        counterfactual_series,
        att_path,
        average_att,
        average_ci: boot.as_ref().map(|b| b.average),
        p_value: boot.as_ref().map(|b| b.p_value),
        bootstrap: boot.map(|b| BootstrapSummary {
            scheme: b.scheme,
            replications: b.replications,
            level: b.level,
            redraws: b.redraws,
        }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GscInTime {
    pub pseudo_t0: i32,
    pub backdate: usize,
    pub average_att: f64,
    pub p_value: Option<f64>,
    /// Set when the pseudo effect is significant at [`ANTICIPATION_ALPHA`].
    pub anticipation_flag: bool,
    pub fit: GscFit,
}

/// Backdate treatment by `backdate` periods on data truncated at the true t0.
pub fn gsc_in_time_placebo(
    panel: &BalancedPanel,
    outcome: &str,
    backdate: usize,
    factors: FactorCount,
    boot: Option<&BootstrapConfig>,
) -> Result<GscInTime, GscError> {
    let n_pre = panel.n_pre();
    let r_floor = match factors {
        FactorCount::Fixed(r) => r,
        FactorCount::Auto { .. } => 0,
    };
    if backdate == 0 || n_pre <= backdate + r_floor + 2 {
        return Err(GscError::InsufficientPrePeriods { needed: backdate + r_floor + 2, got: n_pre });
    }
    let pseudo_t0 = panel.t0() - backdate as i32;
    let truncated = panel.truncate(panel.t0(), pseudo_t0)?;
    let fit = gsc_fit(&truncated, outcome, factors, boot)?;
    if n_pre - backdate <= fit.r + 2 {
        return Err(GscError::InsufficientPrePeriods { needed: backdate + fit.r + 2, got: n_pre });
    }
    Ok(GscInTime {
        pseudo_t0,
        backdate,
        average_att: fit.average_att,
        p_value: fit.p_value,
        anticipation_flag: fit.p_value.is_some_and(|p| p < ANTICIPATION_ALPHA),
        fit,
    })
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;

    fn panel_from(m: DMatrix<f64>, t0: i32) -> BalancedPanel {
        let units = (0..m.nrows()).map(|i| format!("u{i}")).collect();
        BalancedPanel::from_matrices(units, 1, vec!["y".into()], vec![m], t0).unwrap()
    }

    fn did(m: &DMatrix<f64>, n_pre: usize) -> f64 {
        let t = m.ncols();
        let mean = |row: usize, a: usize, b: usize| m.row(row).columns(a, b - a).mean();
        let donors = m.rows(1, m.nrows() - 1);
        let dmean = |a: usize, b: usize| donors.columns(a, b - a).mean();
        (mean(0, n_pre, t) - mean(0, 0, n_pre)) - (dmean(n_pre, t) - dmean(0, n_pre))
    }

    #[test]
    fn r0_matches_closed_form_did() {
        let m = DMatrix::from_fn(8, 12, |i, t| ((i * 31 + t * 17) as f64).sin() + 0.1 * (i * t) as f64);
        let fit = gsc_fit(&panel_from(m.clone(), 7), "y", FactorCount::Fixed(0), None).unwrap();
        assert!((fit.average_att - did(&m, 7)).abs() < 1e-10);
    }

    #[test]
    fn path_identity_and_zero_pre_gap() {
        let m = DMatrix::from_fn(9, 14, |i, t| {
            ((i * 7 + t * 3) as f64).cos() + (1.0 + 0.2 * i as f64) * (t as f64 * 0.5).sin()
        });
        let fit = gsc_fit(&panel_from(m, 8), "y", FactorCount::Fixed(1), None).unwrap();
        let n_pre = fit.n_pre();
        let pre_gap: f64 = (0..n_pre).map(|t| fit.treated_series[t] - fit.counterfactual_series[t]).sum();
        assert!(pre_gap.abs() / (n_pre as f64) < 1e-8);
        for (k, a) in fit.att_path.iter().enumerate() {
            let (y, c) = (fit.treated_series[n_pre + k], fit.counterfactual_series[n_pre + k]);
            assert_eq!(a.att, y - c);
            assert!((c + a.att - y).abs() <= 1e-14 * y.abs().max(1.0));
        }
    }

    #[test]
    fn rotation_leaves_counterfactual_unchanged() {
        let m = DMatrix::from_fn(10, 16, |i, t| {
            ((i * 5 + t * 11) as f64).sin() * 0.3
                + (1.0 + 0.1 * i as f64) * (t as f64 * 0.4).sin()
                + (0.5 - 0.07 * i as f64) * (t as f64 * 0.9).cos()
        });
        let fit = gsc_fit(&panel_from(m, 10), "y", FactorCount::Fixed(2), None).unwrap();
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let q = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let mut rotated = fit.model.clone();
        rotated.factors = &q * &fit.model.factors;
        rotated.loadings = &fit.model.loadings * q.transpose();
        let proj = project_loadings(&rotated, &fit.treated_series[..10]).unwrap();
        let cf = rotated.counterfactual(&proj);
        for (a, b) in cf.iter().zip(&fit.counterfactual_series) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_donors_give_zero_interval() {
        let base: Vec<f64> = (0..12).map(|t| (t as f64 * 0.3).sin()).collect();
        let m = DMatrix::from_fn(6, 12, |_, t| base[t]);
        let cfg = BootstrapConfig { replications: 100, ..Default::default() };
        let fit = gsc_fit(&panel_from(m, 8), "y", FactorCount::Fixed(0), Some(&cfg)).unwrap();
        let ci = fit.average_ci.unwrap();
        assert!(ci.low.abs() < 1e-12 && ci.high.abs() < 1e-12);
        assert_eq!(fit.p_value, Some(1.0));
    }

    #[test]
    fn scale_equivariance() {
        let m = DMatrix::from_fn(10, 14, |i, t| {
            ((i * 13 + t * 7) as f64).sin() * 0.2 + (1.0 + 0.3 * i as f64) * (t as f64 * 0.6).cos()
        });
        let cfg = BootstrapConfig { replications: 100, seed: 3, ..Default::default() };
        let a = gsc_fit(&panel_from(m.clone(), 9), "y", FactorCount::Fixed(1), Some(&cfg)).unwrap();
        let b = gsc_fit(&panel_from(m * 2.5, 9), "y", FactorCount::Fixed(1), Some(&cfg)).unwrap();
        assert!((b.average_att - 2.5 * a.average_att).abs() < 1e-9);
        let (ca, cb) = (a.average_ci.unwrap(), b.average_ci.unwrap());
        assert!((cb.low - 2.5 * ca.low).abs() < 1e-9 && (cb.high - 2.5 * ca.high).abs() < 1e-9);
    }

    #[test]
    fn bootstrap_validation_and_in_time_window() {
        let m = DMatrix::from_fn(6, 12, |i, t| (i + t) as f64 + ((i * t) as f64).sin());
        let p = panel_from(m, 8);
        let bad = BootstrapConfig { replications: 50, ..Default::default() };
        assert!(matches!(gsc_fit(&p, "y", FactorCount::Fixed(0), Some(&bad)), Err(GscError::InvalidBootstrap(_))));
        let it = gsc_in_time_placebo(&p, "y", 3, FactorCount::Fixed(0), None).unwrap();
        assert_eq!(it.pseudo_t0, 5);
        assert_eq!(it.fit.periods.len(), 8);
        assert!(matches!(
            gsc_in_time_placebo(&p, "y", 6, FactorCount::Fixed(0), None),
            Err(GscError::InsufficientPrePeriods { .. })
        ));
    }
}
