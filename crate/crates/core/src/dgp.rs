//! Seeded synthetic panels with known effects, and a brute-force weight oracle.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{write_long_csv, BalancedPanel, PanelError};
use crate::rng;
use crate::scm::{weighted_loss, PredictorMatrices, VMatrix, WeightVector};

/// Largest donor pool the grid oracle will enumerate.
pub const MAX_GRID_DONORS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DgpError {
    #[error("invalid dgp configuration: {0}")]
    InvalidSpec(String),
    #[error("grid oracle supports at most {max} donors, got {donors}")]
    GridTooLarge { donors: usize, max: usize },
    #[error("grid step {0} must divide 1")]
    InvalidStep(f64),
    #[error(transparent)]
    Panel(#[from] PanelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DgpMode {
    /// Treated unit is a Dirichlet-weighted mix of donors.
    ConvexCombination,
    /// Unit and time effects plus `r` latent factors.
    #[default]
    FactorModel,
    /// Unit and time effects only (`r` is ignored).
    TwoWayFe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpSpec {
    /// Treated unit plus donors.
    pub units: usize,
    pub periods: usize,
    pub first_period: i32,
    /// Last pre-treatment year.
    pub t0: i32,
    pub r: usize,
    pub factor_sd: f64,
    pub loading_sd: f64,
    pub unit_effect_sd: f64,
    pub time_effect_sd: f64,
    pub noise_sd: f64,
    /// Effect on the treated unit, one entry per post period.
    pub effect: Vec<f64>,
    pub mode: DgpMode,
    pub outcome: String,
    pub seed: u64,
}

impl Default for DgpSpec {
    fn default() -> Self {
        Self {
            units: 13,
            periods: 29,
            first_period: 1996,
            t0: 2006,
            r: 2,
            factor_sd: 1.0,
            loading_sd: 1.0,
            unit_effect_sd: 1.0,
            time_effect_sd: 1.0,
            noise_sd: 0.05,
            effect: vec![0.0; 18],
            mode: DgpMode::FactorModel,
            outcome: "y".into(),
            seed: 0,
        }
    }
}

impl DgpSpec {
    pub fn n_pre(&self) -> usize {
        (self.t0 - self.first_period + 1).max(0) as usize
    }

    pub fn n_post(&self) -> usize {
        self.periods.saturating_sub(self.n_pre())
    }

    /// Same effect in every post period.
    pub fn with_constant_effect(mut self, delta: f64) -> Self {
        self.effect = vec![delta; self.n_post()];
        self
    }

    pub fn validate(&self) -> Result<(), DgpError> {
        let sds = [self.factor_sd, self.loading_sd, self.unit_effect_sd, self.time_effect_sd, self.noise_sd];
        if sds.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(DgpError::InvalidSpec("standard deviations must be finite and non-negative".into()));
        }
        if self.units < 3 {
            return Err(DgpError::InvalidSpec(format!("need at least 3 units, got {}", self.units)));
        }
        if self.n_pre() < 2 || self.n_post() < 1 {
            return Err(DgpError::InvalidSpec(format!(
                "t0 = {} leaves {} pre and {} post periods",
                self.t0,
                self.n_pre(),
                self.n_post()
            )));
        }
        if self.effect.len() != self.n_post() {
            return Err(DgpError::InvalidSpec(format!(
                "effect path has {} entries for {} post periods",
                self.effect.len(),
                self.n_post()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPanel {
    pub panel: BalancedPanel,
    /// True effect path over post periods.
    pub att: Vec<f64>,
    /// Treated series without the effect.
    pub untreated: Vec<f64>,
    /// Donor weights used to build the treated unit (convex mode only).
    pub weights: Option<Vec<f64>>,
}

impl SimulatedPanel {
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), PanelError> {
        write_long_csv(sink, &self.panel.to_observations())
    }
}

fn normals(seed: u64, tag: &str, sd: f64, n: usize) -> Vec<f64> {
    let mut g = rng::stream(seed, tag, 0);
    let d = Normal::new(0.0, sd).expect("validated sd");
    (0..n).map(|_| d.sample(&mut g)).collect()
}

/// `α_i + ξ_t + λ_iᵀ f_t + ε_it` for every unit, without any effect.
fn factor_outcomes(spec: &DgpSpec, r: usize) -> DMatrix<f64> {
    let (n, t) = (spec.units, spec.periods);
    let alpha = normals(spec.seed, "dgp-unit", spec.unit_effect_sd, n);
    let xi = normals(spec.seed, "dgp-time", spec.time_effect_sd, t);
    let f = normals(spec.seed, "dgp-factors", spec.factor_sd, r * t);
    let lambda = normals(spec.seed, "dgp-loadings", spec.loading_sd, n * r);
    let eps = normals(spec.seed, "dgp-noise", spec.noise_sd, n * t);
    DMatrix::from_fn(n, t, |i, s| {
        let common: f64 = (0..r).map(|k| lambda[i * r + k] * f[k * t + s]).sum();
        alpha[i] + xi[s] + common + eps[i * t + s]
    })
}

fn finish(spec: &DgpSpec, mut y: DMatrix<f64>, weights: Option<Vec<f64>>) -> Result<SimulatedPanel, DgpError> {
    let n_pre = spec.n_pre();
    let untreated: Vec<f64> = y.row(0).iter().copied().collect();
    for (k, d) in spec.effect.iter().enumerate() {
        y[(0, n_pre + k)] += d;
    }
    let units = std::iter::once("treated".to_string())
        .chain((1..spec.units).map(|i| format!("donor{i:02}")))
        .collect();
    let panel = BalancedPanel::from_matrices(units, spec.first_period, vec![spec.outcome.clone()], vec![y], spec.t0)?;
    Ok(SimulatedPanel { panel, att: spec.effect.clone(), untreated, weights })
}

/// Factor-model panel (or two-way FE when `mode` is `TwoWayFe`) with the
/// effect path added to the treated unit after t0.
pub fn simulate_factor_panel(spec: &DgpSpec) -> Result<SimulatedPanel, DgpError> {
    spec.validate()?;
    let r = if spec.mode == DgpMode::TwoWayFe { 0 } else { spec.r };
    finish(spec, factor_outcomes(spec, r), None)
}

/// Donors from the factor model; the treated unit is a Dirichlet(1, …, 1)
/// convex combination of donors, plus the effect after t0.
pub fn simulate_convex_panel(spec: &DgpSpec) -> Result<SimulatedPanel, DgpError> {
    spec.validate()?;
    let j = spec.units - 1;
    let mut g = rng::stream(spec.seed, "dgp-weights", 0);
    // Dirichlet(1, …, 1) as normalized unit exponentials
    let e: Vec<f64> = (0..j).map(|_| Exp1.sample(&mut g)).collect();
    let total: f64 = e.iter().sum();
    let w: Vec<f64> = e.iter().map(|x| x / total).collect();
    simulate_convex_with_weights(spec, &w)
}

/// Convex-mode panel with caller-chosen donor weights.
pub fn simulate_convex_with_weights(spec: &DgpSpec, w: &[f64]) -> Result<SimulatedPanel, DgpError> {
    spec.validate()?;
    let j = spec.units - 1;
    if w.len() != j || w.iter().any(|v| !(*v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DgpError::InvalidSpec(format!("weights must be {j} non-negative values summing to 1")));
    }
    let mut y = factor_outcomes(spec, spec.r);
    for s in 0..spec.periods {
        y[(0, s)] = (0..j).map(|d| w[d] * y[(d + 1, s)]).sum();
    }
    finish(spec, y, Some(w.to_vec()))
}

/// Exhaustive search over simplex points with coordinates on a `step` grid.
/// Ties go to the lexicographically smallest weight vector.
pub fn oracle_grid_weights(pred: &PredictorMatrices, v: &VMatrix, step: f64) -> Result<WeightVector, DgpError> {
    let j = pred.n_donors();
    if j > MAX_GRID_DONORS {
        return Err(DgpError::GridTooLarge { donors: j, max: MAX_GRID_DONORS });
    }
    let n = (1.0 / step).round();
    if !(step > 0.0) || (n * step - 1.0).abs() > 1e-9 {
        return Err(DgpError::InvalidStep(step));
    }
    let n = n as usize;
    let mut counts = vec![0usize; j];
    let mut best: Option<(f64, Vec<usize>)> = None;
    enumerate(&mut counts, 0, n, &mut |c| {
        let w: Vec<f64> = c.iter().map(|&k| k as f64 / n as f64).collect();
        let loss = weighted_loss(pred, v, &w);
        if best.as_ref().is_none_or(|b| loss < b.0) {
            best = Some((loss, c.to_vec()));
        }
    });
    let (_, c) = best.expect("grid is non-empty");
    Ok(WeightVector {
        donors: pred.donors.clone(),
        weights: c.iter().map(|&k| k as f64 / n as f64).collect(),
    })
}

/// Compositions of `left` into the remaining slots, in lexicographic order.
fn enumerate(counts: &mut [usize], pos: usize, left: usize, visit: &mut impl FnMut(&[usize])) {
    if pos + 1 == counts.len() {
        counts[pos] = left;
        visit(counts);
        return;
    }
    for k in 0..=left {
        counts[pos] = k;
        enumerate(counts, pos + 1, left - k, visit);
    }
}

/// Uniform index in `0..n`, for harnesses that need a seeded designated unit.
pub fn seeded_index(seed: u64, tag: &str, n: usize) -> usize {
    rng::stream(seed, tag, 0).random_range(0..n)
}
