//! Simplex-constrained weighted least squares.
//!
//! `min_w (x1 − X0 w)ᵀ V (x1 − X0 w)` over the simplex is the minimum-norm
//! point of the convex hull of the columns `P_j = V^½ (X0_j − x1)`. It is
//! solved with Wolfe's fully-corrective Frank-Wolfe scheme: a linear
//! minimization step adds one vertex, then the affine minimizer of the
//! active set ("corral") is taken, stepping back to the hull when it leaves
//! it. The active set stays affinely independent, so each affine solve is a
//! small positive-definite system.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::predictors::PredictorMatrices;
use super::ScmError;

pub const OBJECTIVE_TOL: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 10_000;

/// Donor weights on the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub donors: Vec<String>,
    pub weights: Vec<f64>,
}

impl WeightVector {
    pub fn get(&self, donor: &str) -> Option<f64> {
        self.donors.iter().position(|d| d == donor).map(|i| self.weights[i])
    }
}

/// Diagonal predictor-importance matrix, normalized to sum 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VMatrix {
    pub diagonal: Vec<f64>,
}

impl VMatrix {
    pub fn uniform(k: usize) -> Self {
        Self { diagonal: vec![1.0 / k as f64; k] }
    }

    /// Normalizes `raw` to sum 1. Entries must be non-negative with a positive sum.
    pub fn new(raw: Vec<f64>) -> Result<Self, ScmError> {
        let sum: f64 = raw.iter().sum();
        if raw.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || !(sum > 0.0) {
            return Err(ScmError::InvalidV);
        }
        Ok(Self { diagonal: raw.into_iter().map(|v| v / sum).collect() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexSolution {
    pub weights: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Objective `(x1 − X0 w)ᵀ V (x1 − X0 w)`.
pub fn weighted_loss(pred: &PredictorMatrices, v: &VMatrix, w: &[f64]) -> f64 {
    let fit = &pred.x0 * DVector::from_column_slice(w);
    (0..pred.k())
        .map(|i| v.diagonal[i] * (pred.x1[i] - fit[i]).powi(2))
        .sum()
}

pub fn solve_weights(pred: &PredictorMatrices, v: &VMatrix) -> Result<WeightVector, ScmError> {
    if v.diagonal.len() != pred.k() {
        return Err(ScmError::DimensionMismatch(format!(
            "V has {} entries for {} predictors",
            v.diagonal.len(),
            pred.k()
        )));
    }
    let points = scaled_points(&pred.x0, &pred.x1, &v.diagonal);
    let sol = min_norm_point(&points)?;
    Ok(WeightVector { donors: pred.donors.clone(), weights: sol.weights })
}

/// Columns `V^½ (X0_j − x1)`.
pub(crate) fn scaled_points(x0: &DMatrix<f64>, x1: &DVector<f64>, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x0.nrows(), x0.ncols(), |i, j| v[i].sqrt() * (x0[(i, j)] - x1[i]))
}

/// Minimum-norm point in the convex hull of the columns of `points`.
pub(crate) fn min_norm_point(points: &DMatrix<f64>) -> Result<SimplexSolution, ScmError> {
    let (k, j) = points.shape();
    let norms2: Vec<f64> = points.column_iter().map(|c| c.norm_squared()).collect();
    let scale = norms2.iter().cloned().fold(0.0, f64::max);
    let first = argmin(&norms2);
    if scale == 0.0 || norms2[first] == 0.0 {
        let mut weights = vec![0.0; j];
        weights[first] = 1.0;
        return Ok(SimplexSolution { weights, objective: 0.0, iterations: 0 });
    }
    // Work on points scaled to unit max norm; the minimizer is scale-free.
    let p = points / scale.sqrt();

    let mut active = vec![first];
    let mut lambda = vec![1.0];
    let mut x: DVector<f64> = p.column(first).into_owned();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let xx = x.norm_squared();
        let dots: Vec<f64> = (0..j).map(|c| p.column(c).dot(&x)).collect();
        let entering = argmin(&dots);
        let gap = xx - dots[entering];
        if gap <= OBJECTIVE_TOL * xx + 1e-15 || active.contains(&entering) {
            break;
        }
        if iterations > MAX_ITERATIONS {
            return Err(ScmError::NumericalFailure { iterations, gap });
        }
        active.push(entering);
        lambda.push(0.0);
        loop {
            let Some(alpha) = affine_minimizer(&p, &active) else {
                return Ok(finish(&p, &active, &lambda, scale, iterations));
            };
            if alpha.iter().all(|&a| a > 0.0) {
                lambda = alpha;
                break;
            }
            // Step from lambda toward alpha until the first coordinate hits zero.
            let mut theta = 1.0;
            let mut leaving = 0;
            for (i, (&l, &a)) in lambda.iter().zip(&alpha).enumerate() {
                if a <= 0.0 && l - a > 0.0 {
                    let t = l / (l - a);
                    if t < theta {
                        theta = t;
                        leaving = i;
                    }
                }
            }
            if theta == 0.0 && active[leaving] == entering {
                // no descent possible along the entering vertex: numerically optimal
                active.pop();
                lambda.pop();
                return Ok(finish(&p, &active, &lambda, scale, iterations));
            }
            for (l, a) in lambda.iter_mut().zip(&alpha) {
                *l = theta * a + (1.0 - theta) * *l;
            }
            lambda[leaving] = 0.0;
            let keep: Vec<bool> = lambda.iter().map(|&l| l > 1e-16).collect();
            active = active.iter().zip(&keep).filter(|(_, &k)| k).map(|(&a, _)| a).collect();
            lambda = lambda.iter().zip(&keep).filter(|(_, &k)| k).map(|(&l, _)| l).collect();
            let s: f64 = lambda.iter().sum();
            lambda.iter_mut().for_each(|l| *l /= s);
            if active.len() == 1 {
                lambda = vec![1.0];
                break;
            }
        }
        x = DVector::zeros(k);
        for (&a, &l) in active.iter().zip(&lambda) {
            x.axpy(l, &p.column(a), 1.0);
        }
    }
    Ok(finish(&p, &active, &lambda, scale, iterations))
}

fn finish(
    p: &DMatrix<f64>,
    active: &[usize],
    lambda: &[f64],
    scale: f64,
    iterations: usize,
) -> SimplexSolution {
    let mut weights = vec![0.0; p.ncols()];
    let sum: f64 = lambda.iter().map(|l| l.max(0.0)).sum();
    let mut x = DVector::zeros(p.nrows());
    for (&a, &l) in active.iter().zip(lambda) {
        weights[a] = l.max(0.0) / sum;
        x.axpy(weights[a], &p.column(a), 1.0);
    }
    SimplexSolution { weights, objective: x.norm_squared() * scale, iterations }
}

/// Weights `alpha` (summing to 1) of the point of minimum norm in the affine
/// hull of the active columns. Solves `(PᵀP + 11ᵀ) y = 1`, `alpha = y / Σy`.
fn affine_minimizer(p: &DMatrix<f64>, active: &[usize]) -> Option<Vec<f64>> {
    let s = active.len();
    let m = DMatrix::from_fn(s, s, |a, b| p.column(active[a]).dot(&p.column(active[b])) + 1.0);
    let ones = DVector::from_element(s, 1.0);
    let y = match m.clone().cholesky() {
        Some(ch) => ch.solve(&ones),
        None => m.lu().solve(&ones)?,
    };
    let sum = y.sum();
    if !sum.is_finite() || sum.abs() < 1e-300 {
        return None;
    }
    Some(y.iter().map(|v| v / sum).collect())
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}
