//! Donor-resampling bootstrap for the GSC effect path.
//!
//! The default scheme draws the sampling error of the treated counterfactual
//! from donors: each replicate holds out one donor as a pseudo-treated unit,
//! refits the factor model on a with-replacement resample of the remaining
//! donors, projects the held-out unit on the pre-period and records its
//! post-period prediction error `e_b`. Replicate effects are `att − e_b`, so
//! the percentile intervals reflect both factor-estimation noise and the
//! idiosyncratic noise of the treated unit itself.
//!
//! [`BootstrapScheme::ResampleDonors`] keeps the treated unit fixed and only
//! resamples donors; it captures factor-estimation noise alone.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ife::{fit_ife, project_loadings};
use super::GscError;
use crate::placebo::Interval;
use crate::rng;
use crate::stats;

/// Redraw budget per replicate before giving up.
const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapScheme {
    #[default]
    PseudoTreated,
    ResampleDonors,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub replications: usize,
    pub seed: u64,
    pub level: f64,
    pub scheme: BootstrapScheme,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { replications: 500, seed: 0, level: 0.95, scheme: BootstrapScheme::PseudoTreated }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<(), GscError> {
        if self.replications < 100 {
            return Err(GscError::InvalidBootstrap(format!(
                "replications must be at least 100, got {}",
                self.replications
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(GscError::InvalidBootstrap(format!("level must lie in (0, 1), got {}", self.level)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub scheme: BootstrapScheme,
    pub replications: usize,
    pub level: f64,
    /// Resamples discarded for having too few distinct donors or failing to fit.
    pub redraws: usize,
    pub per_period: Vec<Interval>,
    pub average: Interval,
    /// Two-sided percentile position of 0 among replicate average effects.
    pub p_value: f64,
    pub average_draws: Vec<f64>,
}

/// Bootstrap intervals around `att` (post-period effect path) for a treated
/// `series` and a donor matrix (J × T) with `n_pre` pre-treatment columns.
pub fn bootstrap_ci(
    donors: &DMatrix<f64>,
    series: &[f64],
    n_pre: usize,
    r: usize,
    att: &[f64],
    cfg: &BootstrapConfig,
) -> Result<BootstrapResult, GscError> {
    cfg.validate()?;
    let j = donors.nrows();
    let min_distinct = r + 2;
    let pool = match cfg.scheme {
        BootstrapScheme::PseudoTreated => j - 1,
        BootstrapScheme::ResampleDonors => j,
    };
    if pool < min_distinct {
        return Err(GscError::DegenerateResample { redraws: 0 });
    }
    let draws: Vec<(Vec<f64>, usize)> = (0..cfg.replications)
        .into_par_iter()
        .map(|b| {
            let mut g = rng::stream(cfg.seed, "gsc-bootstrap", b as u64);
            let mut redraws = 0;
            loop {
                if let Some(path) = replicate(donors, series, n_pre, r, att, cfg.scheme, &mut g) {
                    return Ok((path, redraws));
                }
                redraws += 1;
                if redraws >= MAX_REDRAWS {
                    return Err(GscError::DegenerateResample { redraws });
                }
            }
        })
        .collect::<Result<_, _>>()?;
    let redraws = draws.iter().map(|d| d.1).sum();
    let lo = (1.0 - cfg.level) / 2.0;
    let hi = 1.0 - lo;
    let per_period = (0..att.len())
        .map(|t| {
            let mut v: Vec<f64> = draws.iter().map(|d| d.0[t]).collect();
            v.sort_by(f64::total_cmp);
            Interval { low: stats::quantile_sorted(&v, lo), high: stats::quantile_sorted(&v, hi) }
        })
        .collect();
    let average_draws: Vec<f64> = draws.iter().map(|d| stats::mean(&d.0)).collect();
    let mut sorted = average_draws.clone();
    sorted.sort_by(f64::total_cmp);
    let below = sorted.iter().filter(|&&v| v <= 0.0).count();
    let above = sorted.iter().filter(|&&v| v >= 0.0).count();
    let p_value = (2.0 * below.min(above) as f64 / cfg.replications as f64).min(1.0);
    Ok(BootstrapResult {
        scheme: cfg.scheme,
        replications: cfg.replications,
        level: cfg.level,
        redraws,
        per_period,
        average: Interval { low: stats::quantile_sorted(&sorted, lo), high: stats::quantile_sorted(&sorted, hi) },
        p_value,
        average_draws,
    })
}

/// One replicate effect path, or `None` when the draw must be repeated.
fn replicate(
    donors: &DMatrix<f64>,
    series: &[f64],
    n_pre: usize,
    r: usize,
    att: &[f64],
    scheme: BootstrapScheme,
    g: &mut ChaCha8Rng,
) -> Option<Vec<f64>> {
    let j = donors.nrows();
    let (target, pool): (Vec<f64>, Vec<usize>) = match scheme {
        BootstrapScheme::PseudoTreated => {
            let held = g.random_range(0..j);
            (donors.row(held).iter().copied().collect(), (0..j).filter(|&i| i != held).collect())
        }
        BootstrapScheme::ResampleDonors => (series.to_vec(), (0..j).collect()),
    };
    let rows: Vec<usize> = (0..pool.len()).map(|_| pool[g.random_range(0..pool.len())]).collect();
    let mut distinct = rows.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < r + 2 {
        return None;
    }
    let model = fit_ife(&donors.select_rows(&rows), r).ok()?;
    let proj = project_loadings(&model, &target[..n_pre]).ok()?;
    let cf = model.counterfactual(&proj);
    let post = &target[n_pre..];
    Some(match scheme {
        BootstrapScheme::PseudoTreated => {
            post.iter().zip(&cf[n_pre..]).zip(att).map(|((y, c), a)| a - (y - c)).collect()
        }
        BootstrapScheme::ResampleDonors => post.iter().zip(&cf[n_pre..]).map(|(y, c)| y - c).collect(),
    })
}
