//! Permutation inference for a single treated unit.
//!
//! Every unit is refit as if it had been treated at t0 (in-space placebos);
//! the genuinely treated unit is dropped from every placebo donor pool and
//! counted in its own permutation distribution, so p-values live on the
//! lattice `k / (J + 1)`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::panel::{BalancedPanel, PanelError};
use crate::rng;
use crate::scm::{self, FitOptions, ScmError, ScmFit};
use crate::stats;

/// Units whose pre-treatment RMSPE falls below this are left out of ratio tests.
pub const RMSPE_FLOOR: f64 = 1e-8;
/// Significance level for persistence verdicts.
pub const DEFAULT_ALPHA: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlaceboError {
    #[error("treated unit has no usable entry in the placebo distribution")]
    TreatedMissing,
    #[error("all included units have the same statistic")]
    DegenerateDistribution,
    #[error("need at least {needed} placebo effects, found {found}")]
    TooFewPlacebos { needed: usize, found: usize },
    #[error("pseudo treatment date {pseudo} must precede t0 = {t0}")]
    InvalidPseudoT0 { pseudo: i32, t0: i32 },
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error(transparent)]
    Panel(#[from] PanelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    PermanentNegative,
    TemporaryNegative,
    NegativeWeak,
    Null,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::PermanentNegative => "Permanent negative",
            Verdict::TemporaryNegative => "Temporary negative",
            Verdict::NegativeWeak => "Negative, weak significance",
            Verdict::Null => "Null",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    pub average_effect: f64,
    /// Sample SD of the post-treatment gaps.
    pub gap_sd: f64,
    pub end_of_sample_effect: f64,
    pub ci: Option<Interval>,
    pub p_value: Option<f64>,
    pub verdict: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum EntryStatus {
    Ok,
    /// Pre-treatment RMSPE below [`RMSPE_FLOOR`]; the ratio is undefined.
    DegenerateFit,
    Failed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaceboStats {
    pub rmspe_pre: f64,
    pub rmspe_post: f64,
    pub rmspe_ratio: Option<f64>,
    pub gap_t0_plus_1: f64,
    pub gap_end: f64,
    pub average_post_gap: f64,
}

impl PlaceboStats {
    pub fn from_fit(fit: &ScmFit) -> Result<Self, ScmError> {
        let pre = scm::rmspe(fit.pre_gaps())?;
        let post_gaps = fit.post_gaps();
        let post = scm::rmspe(post_gaps)?;
        Ok(Self {
            rmspe_pre: pre,
            rmspe_post: post,
            rmspe_ratio: (pre >= RMSPE_FLOOR).then(|| post / pre),
            gap_t0_plus_1: post_gaps[0],
            gap_end: post_gaps[post_gaps.len() - 1],
            average_post_gap: stats::mean(post_gaps),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboEntry {
    pub unit: String,
    pub is_treated: bool,
    pub status: EntryStatus,
    pub stats: Option<PlaceboStats>,
    pub fit: Option<ScmFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboDistribution {
    pub outcome: String,
    pub t0: i32,
    pub periods: Vec<i32>,
    /// Treated unit first, then donors in panel order.
    pub entries: Vec<PlaceboEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    AveragePostGap,
    GapT0Plus1,
    GapEnd,
    RmspeRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    T0Plus1,
    EndOfSample,
}

/// A permutation p-value `count / n` with its lattice coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationP {
    pub p: f64,
    pub count: usize,
    pub n: usize,
    /// Units left out (failed refits, or undefined ratios).
    pub excluded: usize,
    /// All included statistics equal; `p` is 1 by convention.
    pub degenerate: bool,
}

impl PlaceboDistribution {
    pub fn treated(&self) -> Option<&PlaceboEntry> {
        self.entries.iter().find(|e| e.is_treated)
    }

    fn treated_stats(&self) -> Result<&PlaceboStats, PlaceboError> {
        self.treated()
            .and_then(|e| e.stats.as_ref())
            .ok_or(PlaceboError::TreatedMissing)
    }

    /// `(unit, value, is_treated)` for every entry where `stat` is defined.
    fn values(&self, stat: Statistic) -> (Vec<(f64, bool)>, usize) {
        let mut out = Vec::new();
        let mut excluded = 0;
        for e in &self.entries {
            match e.stats.as_ref().and_then(|s| stat.of(s)) {
                Some(v) => out.push((v, e.is_treated)),
                None => excluded += 1,
            }
        }
        (out, excluded)
    }

    /// CSV `unit,is_treated,rmspe_pre,rmspe_post,ratio,gap_t0p1,gap_end,avg_post_gap`, sorted by unit.
    pub fn write_csv<W: Write>(&self, sink: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record([
            "unit", "is_treated", "rmspe_pre", "rmspe_post", "ratio", "gap_t0p1", "gap_end", "avg_post_gap",
        ])?;
        let mut entries: Vec<&PlaceboEntry> = self.entries.iter().collect();
        entries.sort_by(|a, b| a.unit.cmp(&b.unit));
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in entries {
            let s = e.stats.as_ref();
            w.write_record([
                e.unit.clone(),
                e.is_treated.to_string(),
                fmt(s.map(|s| s.rmspe_pre)),
                fmt(s.map(|s| s.rmspe_post)),
                fmt(s.and_then(|s| s.rmspe_ratio)),
                fmt(s.map(|s| s.gap_t0_plus_1)),
                fmt(s.map(|s| s.gap_end)),
                fmt(s.map(|s| s.average_post_gap)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Long plot data `unit,is_treated,period,gap` for every successful refit.
    pub fn write_gap_paths<W: Write>(&self, sink: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["unit", "is_treated", "period", "gap"])?;
        let mut entries: Vec<&PlaceboEntry> = self.entries.iter().collect();
        entries.sort_by(|a, b| a.unit.cmp(&b.unit));
        for e in entries {
            if let Some(f) = &e.fit {
                for (p, g) in f.periods.iter().zip(&f.gap_series) {
                    w.write_record([e.unit.clone(), e.is_treated.to_string(), p.to_string(), g.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

impl Statistic {
    fn of(self, s: &PlaceboStats) -> Option<f64> {
        match self {
            Statistic::AveragePostGap => Some(s.average_post_gap),
            Statistic::GapT0Plus1 => Some(s.gap_t0_plus_1),
            Statistic::GapEnd => Some(s.gap_end),
            Statistic::RmspeRatio => s.rmspe_ratio,
        }
    }
}

/// Refit every unit as if treated at t0. Placebo donor pools exclude the
/// genuinely treated unit; failed refits are kept with a failure marker.
pub fn in_space(
    panel: &BalancedPanel,
    outcome: &str,
    opts: &FitOptions,
) -> Result<PlaceboDistribution, PlaceboError> {
    panel.outcome_index(outcome)?;
    let n = panel.n_units();
    let entries: Vec<PlaceboEntry> = (0..n)
        .into_par_iter()
        .map(|u| {
            let refit = if u == 0 {
                scm::fit(panel, outcome, opts)
            } else {
                let donors: Vec<usize> = (1..n).filter(|&d| d != u).collect();
                let mut o = opts.clone();
                o.v_search.seed = rng::derive_seed(opts.v_search.seed, "placebo", u as u64);
                panel
                    .reassign(u, &donors)
                    .map_err(ScmError::from)
                    .and_then(|p| scm::fit(&p, outcome, &o))
            };
            entry(&panel.units()[u], u == 0, refit)
        })
        .collect();
    Ok(PlaceboDistribution {
        outcome: outcome.to_string(),
        t0: panel.t0(),
        periods: panel.periods().to_vec(),
        entries,
    })
}

fn entry(unit: &str, is_treated: bool, refit: Result<ScmFit, ScmError>) -> PlaceboEntry {
    let stats = refit.as_ref().map_err(Clone::clone).and_then(PlaceboStats::from_fit);
    let (status, stats) = match stats {
        Ok(s) if s.rmspe_ratio.is_none() => (EntryStatus::DegenerateFit, Some(s)),
        Ok(s) => (EntryStatus::Ok, Some(s)),
        Err(e) => (EntryStatus::Failed(e.to_string()), None),
    };
    PlaceboEntry { unit: unit.to_string(), is_treated, status, stats, fit: refit.ok() }
}

fn ties_with(a: f64, reference: f64) -> f64 {
    a + 1e-9 * reference.abs() + 1e-12
}

fn lattice_p(
    values: &[(f64, bool)],
    excluded: usize,
    at_least_as_extreme: impl Fn(f64) -> bool,
) -> PermutationP {
    let n = values.len();
    let first = values[0].0;
    let degenerate = values.iter().all(|(v, _)| *v == first);
    let count = if degenerate {
        n
    } else {
        values.iter().filter(|(v, _)| at_least_as_extreme(*v)).count()
    };
    PermutationP { p: count as f64 / n as f64, count, n, excluded, degenerate }
}

/// `#{u : |stat_u| ≥ |stat_treated|} / (J + 1)`.
pub fn p_value_two_sided(
    dist: &PlaceboDistribution,
    stat: Statistic,
) -> Result<PermutationP, PlaceboError> {
    let treated = stat.of(dist.treated_stats()?).ok_or(PlaceboError::TreatedMissing)?.abs();
    let (values, excluded) = dist.values(stat);
    Ok(lattice_p(&values, excluded, |v| ties_with(v.abs(), treated) >= treated))
}

/// Left tail: `#{u : gap_u ≤ gap_treated} / (J + 1)` at the chosen horizon.
pub fn p_value_left(
    dist: &PlaceboDistribution,
    horizon: Horizon,
) -> Result<PermutationP, PlaceboError> {
    let stat = match horizon {
        Horizon::T0Plus1 => Statistic::GapT0Plus1,
        Horizon::EndOfSample => Statistic::GapEnd,
    };
    let treated = stat.of(dist.treated_stats()?).ok_or(PlaceboError::TreatedMissing)?;
    let (values, excluded) = dist.values(stat);
    Ok(lattice_p(&values, excluded, |v| v <= ties_with(treated, treated)))
}

/// Share of units whose post/pre RMSPE ratio is at least the treated unit's.
/// Units with degenerate pre-treatment fits are excluded and counted.
pub fn rmspe_ratio_p(dist: &PlaceboDistribution) -> Result<PermutationP, PlaceboError> {
    let treated = dist
        .treated_stats()?
        .rmspe_ratio
        .ok_or(PlaceboError::DegenerateDistribution)?;
    let (values, excluded) = dist.values(Statistic::RmspeRatio);
    Ok(lattice_p(&values, excluded, |v| ties_with(v, treated) >= treated))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaceboCi {
    /// treated ± quantile of |placebo effect − placebo mean|.
    pub centered: Interval,
    /// treated ± z · SD of placebo effects.
    pub gaussian: Interval,
    /// Raw placebo-effect quantiles at (1 − level)/2 and (1 + level)/2.
    pub raw_quantiles: Interval,
    pub level: f64,
    pub n_placebos: usize,
}

pub fn placebo_ci(
    dist: &PlaceboDistribution,
    treated_effect: f64,
    level: f64,
) -> Result<PlaceboCi, PlaceboError> {
    let effects: Vec<f64> = dist
        .entries
        .iter()
        .filter(|e| !e.is_treated)
        .filter_map(|e| e.stats.map(|s| s.average_post_gap))
        .collect();
    placebo_ci_from_effects(&effects, treated_effect, level)
}

pub fn placebo_ci_from_effects(
    effects: &[f64],
    treated_effect: f64,
    level: f64,
) -> Result<PlaceboCi, PlaceboError> {
    if effects.len() < 5 {
        return Err(PlaceboError::TooFewPlacebos { needed: 5, found: effects.len() });
    }
    let upper = (1.0 + level) / 2.0;
    let m = stats::mean(effects);
    let abs_centered: Vec<f64> = effects.iter().map(|e| (e - m).abs()).collect();
    let half = stats::quantile(&abs_centered, upper);
    let z = Normal::standard().inverse_cdf(upper);
    let g = z * stats::sample_sd(effects);
    Ok(PlaceboCi {
        centered: Interval { low: treated_effect - half, high: treated_effect + half },
        gaussian: Interval { low: treated_effect - g, high: treated_effect + g },
        raw_quantiles: Interval {
            low: stats::quantile(effects, 1.0 - upper),
            high: stats::quantile(effects, upper),
        },
        level,
        n_placebos: effects.len(),
    })
}

/// Persistence of a negative effect from left-tail p-values at both horizons.
pub fn classify_persistence(p_t0_plus_1: f64, p_end: f64, average_effect: f64, alpha: f64) -> Verdict {
    if !(average_effect < 0.0) {
        Verdict::Null
    } else if p_end <= alpha {
        Verdict::PermanentNegative
    } else if p_t0_plus_1 <= alpha {
        Verdict::TemporaryNegative
    } else {
        Verdict::NegativeWeak
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InTimePlacebo {
    pub pseudo_t0: i32,
    pub fit: ScmFit,
    pub summary: EffectSummary,
    /// Two-sided p of the pseudo average effect against in-space refits at the pseudo date.
    pub p_value: PermutationP,
    pub distribution: PlaceboDistribution,
}

/// Backdate treatment to `pseudo_t0` on data truncated at the true t0.
pub fn in_time(
    panel: &BalancedPanel,
    outcome: &str,
    pseudo_t0: i32,
    opts: &FitOptions,
) -> Result<InTimePlacebo, PlaceboError> {
    if pseudo_t0 >= panel.t0() {
        return Err(PlaceboError::InvalidPseudoT0 { pseudo: pseudo_t0, t0: panel.t0() });
    }
    let truncated = panel.truncate(panel.t0(), pseudo_t0)?;
    let distribution = in_space(&truncated, outcome, opts)?;
    let fit = distribution
        .treated()
        .and_then(|e| e.fit.clone())
        .ok_or(PlaceboError::TreatedMissing)?;
    let summary = scm::effect_summary(&fit)?;
    let p_value = p_value_two_sided(&distribution, Statistic::AveragePostGap)?;
    Ok(InTimePlacebo { pseudo_t0, fit, summary, p_value, distribution })
}

/// Everything the placebo stage reports for one outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboSummary {
    pub outcome: String,
    pub n_units: usize,
    pub effect: EffectSummary,
    pub rmspe_ratio: Option<f64>,
    pub rmspe_ratio_p: Option<PermutationP>,
    pub two_sided_p_average: PermutationP,
    pub left_p_t0_plus_1: PermutationP,
    pub left_p_end: PermutationP,
    pub ci: Option<PlaceboCi>,
    pub alpha: f64,
    pub failed_units: Vec<String>,
    pub degenerate_units: Vec<String>,
}

pub fn summarize(
    dist: &PlaceboDistribution,
    alpha: f64,
    level: f64,
) -> Result<PlaceboSummary, PlaceboError> {
    let treated = dist.treated().and_then(|e| e.fit.as_ref()).ok_or(PlaceboError::TreatedMissing)?;
    let mut effect = scm::effect_summary(treated)?;
    let two_sided = p_value_two_sided(dist, Statistic::AveragePostGap)?;
    let left1 = p_value_left(dist, Horizon::T0Plus1)?;
    let left_end = p_value_left(dist, Horizon::EndOfSample)?;
    let ci = placebo_ci(dist, effect.average_effect, level).ok();
    effect.ci = ci.map(|c| c.centered);
    effect.p_value = Some(two_sided.p);
    effect.verdict = Some(classify_persistence(left1.p, left_end.p, effect.average_effect, alpha));
    let names = |f: &dyn Fn(&EntryStatus) -> bool| {
        dist.entries.iter().filter(|e| f(&e.status)).map(|e| e.unit.clone()).collect::<Vec<_>>()
    };
    Ok(PlaceboSummary {
        outcome: dist.outcome.clone(),
        n_units: dist.entries.len(),
        effect,
        rmspe_ratio: dist.treated_stats()?.rmspe_ratio,
        rmspe_ratio_p: rmspe_ratio_p(dist).ok(),
        two_sided_p_average: two_sided,
        left_p_t0_plus_1: left1,
        left_p_end: left_end,
        ci,
        alpha,
        failed_units: names(&|s| matches!(s, EntryStatus::Failed(_))),
        degenerate_units: names(&|s| matches!(s, EntryStatus::DegenerateFit)),
    })
}
