//! Interactive fixed effects: `Y_it = μ + α_i + ξ_t + λ_iᵀ f_t + ε_it`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::GscError;

pub const CONVERGENCE_TOL: f64 = 1e-9;
pub const MAX_ALS_ITERATIONS: usize = 2000;
const RANK_TOL: f64 = 1e-10;

/// Estimated donor model. `factors` is r × T with `F Fᵀ / T = I`;
/// `loadings` is J × r with `ΛᵀΛ` diagonal and descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub r: usize,
    pub grand_mean: f64,
    pub unit_effects: Vec<f64>,
    pub time_effects: Vec<f64>,
    pub factors: DMatrix<f64>,
    pub loadings: DMatrix<f64>,
    /// Mean squared residual over all donor cells.
    pub sigma2: f64,
    pub iterations: usize,
}

impl FactorModel {
    pub fn n_periods(&self) -> usize {
        self.time_effects.len()
    }

    /// Fitted donor matrix.
    pub fn fitted(&self) -> DMatrix<f64> {
        let low_rank = &self.loadings * &self.factors;
        DMatrix::from_fn(self.unit_effects.len(), self.n_periods(), |i, t| {
            self.grand_mean + self.unit_effects[i] + self.time_effects[t] + low_rank[(i, t)]
        })
    }

    /// Counterfactual path for a unit with the given projection.
    pub fn counterfactual(&self, proj: &TreatedProjection) -> Vec<f64> {
        (0..self.n_periods())
            .map(|t| {
                let common: f64 = (0..self.r).map(|k| proj.loadings[k] * self.factors[(k, t)]).sum();
                self.grand_mean + self.time_effects[t] + proj.offset + common
            })
            .collect()
    }
}

/// Loadings and unit offset of a unit outside the estimation sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatedProjection {
    pub loadings: Vec<f64>,
    pub offset: f64,
}

struct TwoWay {
    mu: f64,
    unit: Vec<f64>,
    time: Vec<f64>,
}

fn two_way(y: &DMatrix<f64>) -> TwoWay {
    let (j, t) = y.shape();
    let mu = y.mean();
    let unit = (0..j).map(|i| y.row(i).mean() - mu).collect();
    let time = (0..t).map(|s| y.column(s).mean() - mu).collect();
    TwoWay { mu, unit, time }
}

fn residual(y: &DMatrix<f64>, fe: &TwoWay) -> DMatrix<f64> {
    DMatrix::from_fn(y.nrows(), y.ncols(), |i, t| y[(i, t)] - fe.mu - fe.unit[i] - fe.time[t])
}

struct LowRank {
    factors: DMatrix<f64>,
    loadings: DMatrix<f64>,
}

impl LowRank {
    fn product(&self) -> DMatrix<f64> {
        &self.loadings * &self.factors
    }
}

/// Top-r singular triplets of `z`, normalized so `F Fᵀ / T = I`.
fn leading_factors(z: &DMatrix<f64>, r: usize, scale: f64) -> Result<LowRank, GscError> {
    let (j, t) = z.shape();
    let svd = z.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let top = svd.singular_values[order[0]];
    let tol = RANK_TOL * top.max(scale);
    let sqrt_t = (t as f64).sqrt();
    let mut factors = DMatrix::zeros(r, t);
    let mut loadings = DMatrix::zeros(j, r);
    for (k, &idx) in order.iter().take(r).enumerate() {
        let s = svd.singular_values[idx];
        if !(s > tol) {
            return Err(GscError::RankDeficient { r, singular_value: s });
        }
        let mut f: Vec<f64> = vt.row(idx).iter().map(|v| v * sqrt_t).collect();
        let mut l: Vec<f64> = u.column(idx).iter().map(|v| v * s / sqrt_t).collect();
        // sign: largest-magnitude factor entry positive
        let pivot = f
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if v.abs() > f[best].abs() * (1.0 + 1e-12) { i } else { best });
        if f[pivot] < 0.0 {
            f.iter_mut().for_each(|v| *v = -*v);
            l.iter_mut().for_each(|v| *v = -*v);
        }
        factors.row_mut(k).copy_from_slice(&f);
        loadings.column_mut(k).copy_from_slice(&l);
    }
    Ok(LowRank { factors, loadings })
}

/// Alternating least squares: two-way effects given the low-rank part, then
/// the low-rank part from the top-r SVD of the two-way residual. Warm-started
/// from the SVD of the double-demeaned matrix.
pub fn fit_ife(y: &DMatrix<f64>, r: usize) -> Result<FactorModel, GscError> {
    let (j, t) = y.shape();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(GscError::NonFinite);
    }
    if r >= j.min(t) {
        return Err(GscError::RankDeficient { r, singular_value: 0.0 });
    }
    let mut fe = two_way(y);
    if r == 0 {
        let resid = residual(y, &fe);
        return Ok(model(fe, DMatrix::zeros(0, t), DMatrix::zeros(j, 0), &resid, 0, 1));
    }
    let scale = DMatrix::from_fn(j, t, |i, s| y[(i, s)] - fe.mu).norm();
    let mut lr = leading_factors(&residual(y, &fe), r, scale)?;
    let mut prev = f64::INFINITY;
    let mut iterations = 0;
    loop {
        iterations += 1;
        fe = two_way(&(y - lr.product()));
        let resid = residual(y, &fe);
        lr = leading_factors(&resid, r, scale)?;
        let obj = (&resid - lr.product()).norm_squared();
        // relative change, with an absolute floor at rounding level for exact low-rank data
        let floor = (1e-13 * scale).powi(2);
        if (prev - obj).abs() <= CONVERGENCE_TOL * prev.min(obj) + floor {
            let resid = residual(y, &fe) - lr.product();
            return Ok(model(fe, lr.factors, lr.loadings, &resid, r, iterations));
        }
        if iterations >= MAX_ALS_ITERATIONS {
            return Err(GscError::NonConvergence { iterations, change: (prev - obj).abs() });
        }
        prev = obj;
    }
}

fn model(
    fe: TwoWay,
    factors: DMatrix<f64>,
    loadings: DMatrix<f64>,
    resid: &DMatrix<f64>,
    r: usize,
    iterations: usize,
) -> FactorModel {
    FactorModel {
        r,
        grand_mean: fe.mu,
        unit_effects: fe.unit,
        time_effects: fe.time,
        factors,
        loadings,
        sigma2: resid.norm_squared() / resid.len() as f64,
        iterations,
    }
}

/// Least squares of `y_t − μ − ξ_t` on `(1, f_t)` over the first `pre.len()`
/// periods; the intercept is the unit offset, so the pre-period mean gap is 0.
pub fn project_loadings(model: &FactorModel, pre: &[f64]) -> Result<TreatedProjection, GscError> {
    let n = pre.len();
    let r = model.r;
    if n <= r || n > model.n_periods() {
        return Err(GscError::InsufficientPrePeriods { needed: r + 1, got: n });
    }
    let z = DVector::from_fn(n, |t, _| pre[t] - model.grand_mean - model.time_effects[t]);
    if r == 0 {
        return Ok(TreatedProjection { loadings: vec![], offset: z.mean() });
    }
    let x = DMatrix::from_fn(n, r + 1, |t, c| if c == 0 { 1.0 } else { model.factors[(c - 1, t)] });
    let svd = x.svd(true, true);
    let (max, min) = svd
        .singular_values
        .iter()
        .fold((0.0f64, f64::INFINITY), |(hi, lo), &s| (hi.max(s), lo.min(s)));
    if !(min > RANK_TOL * max) {
        return Err(GscError::CollinearFactors);
    }
    let coef = svd.solve(&z, 0.0).map_err(|_| GscError::CollinearFactors)?;
    Ok(TreatedProjection { loadings: coef.iter().skip(1).copied().collect(), offset: coef[0] })
}
