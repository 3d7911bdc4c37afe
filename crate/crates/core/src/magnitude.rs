//! Level translations of log-outcome gaps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MagnitudeError {
    #[error("baseline must be positive, got {0}")]
    NonPositiveBaseline(f64),
    #[error("no gaps supplied")]
    EmptyPath,
    #[error("horizon of {horizon} years exceeds the {available} gaps supplied")]
    HorizonExceedsPath { horizon: usize, available: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeInput {
    /// Log gaps per year, or a single average gap applied to every year.
    pub log_gaps: Vec<f64>,
    /// Counterfactual level per year (e.g. currency units).
    pub baseline: f64,
    /// Years to accumulate; defaults to the number of gaps.
    pub horizon: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Magnitude {
    /// `1 − exp(gap)` per year; negative values are gains.
    pub pct_loss: Vec<f64>,
    pub average_pct_loss: f64,
    /// `baseline × average_pct_loss`.
    pub annual_loss: f64,
    /// Sum over the horizon of `baseline × pct_loss`.
    pub cumulative_loss: f64,
    /// Same sum using the first-order approximation `pct_loss ≈ −gap`.
    pub cumulative_loss_linear: f64,
    pub horizon: usize,
}

pub fn translate_magnitude(m: &MagnitudeInput) -> Result<Magnitude, MagnitudeError> {
    if !(m.baseline > 0.0) || !m.baseline.is_finite() {
        return Err(MagnitudeError::NonPositiveBaseline(m.baseline));
    }
    if m.log_gaps.is_empty() {
        return Err(MagnitudeError::EmptyPath);
    }
    let horizon = m.horizon.unwrap_or(m.log_gaps.len());
    let gaps: Vec<f64> = if m.log_gaps.len() == 1 {
        vec![m.log_gaps[0]; horizon]
    } else if horizon <= m.log_gaps.len() {
        m.log_gaps[..horizon].to_vec()
    } else {
        return Err(MagnitudeError::HorizonExceedsPath { horizon, available: m.log_gaps.len() });
    };
    let pct_loss: Vec<f64> = gaps.iter().map(|g| -g.exp_m1()).collect();
    let average_pct_loss = if horizon == 0 { 0.0 } else { pct_loss.iter().sum::<f64>() / horizon as f64 };
    Ok(Magnitude {
        average_pct_loss,
        annual_loss: m.baseline * average_pct_loss,
        cumulative_loss: pct_loss.iter().map(|p| m.baseline * p).sum(),
        cumulative_loss_linear: gaps.iter().map(|g| -m.baseline * g).sum(),
        pct_loss,
        horizon,
    })
}
