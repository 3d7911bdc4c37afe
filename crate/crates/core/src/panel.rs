//! Long-format ingestion and the balanced panel used by every estimator.
//!
//! A [`BalancedPanel`] is a dense units × periods grid per outcome. The
//! treated unit is always stored in row 0; donors follow in input order.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PanelError {
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("line {line}: expected {expected} fields, found {found}")]
    MalformedRow { line: u64, expected: usize, found: usize },
    #[error("line {line}: value `{value}` is not a finite number")]
    NonNumericValue { line: u64, value: String },
    #[error("line {line}: period `{value}` is not an integer year")]
    InvalidPeriod { line: u64, value: String },
    #[error("line {line}: empty value for ({unit}, {period}, {outcome})")]
    EmptyValue { line: u64, unit: String, period: String, outcome: String },
    #[error("duplicate observation ({unit}, {period}, {outcome})")]
    DuplicateKey { unit: String, period: i32, outcome: String },
    #[error("unbalanced panel, {} missing cell(s): {}", .0.len(), format_cells(.0))]
    UnbalancedPanel(Vec<MissingCell>),
    #[error("treated unit `{0}` not present in data")]
    TreatedUnitMissing(String),
    #[error("unit `{0}` not present in data")]
    UnknownUnit(String),
    #[error("outcome `{0}` not present in panel")]
    UnknownOutcome(String),
    #[error("need at least 2 pre-treatment periods, found {0}")]
    InsufficientPrePeriods(usize),
    #[error("no post-treatment periods after t0 = {0}")]
    NoPostPeriods(i32),
    #[error("need at least 2 donors, found {0}")]
    InsufficientDonors(usize),
    #[error("no observations")]
    Empty,
    #[error("csv: {0}")]
    Csv(String),
}

fn format_cells(cells: &[MissingCell]) -> String {
    cells
        .iter()
        .map(|c| format!("({}, {}, {})", c.unit, c.period, c.outcome))
        .collect::<Vec<_>>()
        .join(", ")
}

impl From<csv::Error> for PanelError {
    fn from(e: csv::Error) -> Self {
        PanelError::Csv(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingCell {
    pub unit: String,
    pub period: i32,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelObservation {
    pub unit: String,
    pub period: i32,
    pub outcome: String,
    pub value: f64,
}

/// Maps the four logical fields onto CSV column names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub unit: String,
    pub period: String,
    pub outcome: String,
    pub value: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            unit: "unit".into(),
            period: "period".into(),
            outcome: "outcome".into(),
            value: "value".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreatmentAssignment {
    pub treated_unit: String,
    /// Last pre-treatment period.
    pub t0: i32,
}

/// Parse a long-format CSV. Keys must be unique; empty value cells are errors.
pub fn load_long_csv<R: Read>(
    source: R,
    schema: &CsvSchema,
) -> Result<Vec<PanelObservation>, PanelError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PanelError::MissingColumn(name.to_string()))
    };
    let (iu, ip, io, iv) = (
        col(&schema.unit)?,
        col(&schema.period)?,
        col(&schema.outcome)?,
        col(&schema.value)?,
    );
    let width = headers.len();

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(PanelError::MalformedRow {
                line,
                expected: width,
                found: record.len(),
            });
        }
        let unit = record[iu].to_string();
        let period_raw = &record[ip];
        let outcome = record[io].to_string();
        let value_raw = &record[iv];
        if value_raw.is_empty() {
            return Err(PanelError::EmptyValue {
                line,
                unit,
                period: period_raw.to_string(),
                outcome,
            });
        }
        let period: i32 = period_raw.parse().map_err(|_| PanelError::InvalidPeriod {
            line,
            value: period_raw.to_string(),
        })?;
        let value: f64 = value_raw
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| PanelError::NonNumericValue {
                line,
                value: value_raw.to_string(),
            })?;
        if !seen.insert((unit.clone(), period, outcome.clone())) {
            return Err(PanelError::DuplicateKey { unit, period, outcome });
        }
        out.push(PanelObservation { unit, period, outcome, value });
    }
    Ok(out)
}

/// Write observations in the canonical `unit,period,outcome,value` layout.
pub fn write_long_csv<W: Write>(
    sink: W,
    observations: &[PanelObservation],
) -> Result<(), PanelError> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(["unit", "period", "outcome", "value"])?;
    for o in observations {
        writer.write_record([
            o.unit.as_str(),
            &o.period.to_string(),
            o.outcome.as_str(),
            &o.value.to_string(),
        ])?;
    }
    writer.flush().map_err(|e| PanelError::Csv(e.to_string()))?;
    Ok(())
}

/// Dense, validated panel. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedPanel {
    units: Vec<String>,
    periods: Vec<i32>,
    outcomes: Vec<String>,
    values: Vec<DMatrix<f64>>,
    t0: i32,
}

impl BalancedPanel {
    /// Build from dense matrices (units × periods, one per outcome). `units[0]` is treated.
    pub fn from_matrices(
        units: Vec<String>,
        first_period: i32,
        outcomes: Vec<String>,
        values: Vec<DMatrix<f64>>,
        t0: i32,
    ) -> Result<Self, PanelError> {
        if units.is_empty() || outcomes.is_empty() || values.is_empty() {
            return Err(PanelError::Empty);
        }
        let n_periods = values[0].ncols();
        assert_eq!(outcomes.len(), values.len(), "one matrix per outcome");
        for m in &values {
            assert_eq!(m.nrows(), units.len(), "matrix rows must match units");
            assert_eq!(m.ncols(), n_periods, "matrix columns must match periods");
        }
        let periods: Vec<i32> = (0..n_periods as i32).map(|i| first_period + i).collect();
        let panel = Self { units, periods, outcomes, values, t0 };
        panel.validate()?;
        Ok(panel)
    }

    fn validate(&self) -> Result<(), PanelError> {
        let n_pre = self.periods.iter().filter(|&&p| p <= self.t0).count();
        if n_pre < 2 {
            return Err(PanelError::InsufficientPrePeriods(n_pre));
        }
        if n_pre == self.periods.len() {
            return Err(PanelError::NoPostPeriods(self.t0));
        }
        if self.units.len() < 3 {
            return Err(PanelError::InsufficientDonors(self.units.len().saturating_sub(1)));
        }
        Ok(())
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn treated_unit(&self) -> &str {
        &self.units[0]
    }

    pub fn donors(&self) -> &[String] {
        &self.units[1..]
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn periods(&self) -> &[i32] {
        &self.periods
    }

    pub fn outcomes(&self) -> &[String] {
        &self.outcomes
    }

    pub fn t0(&self) -> i32 {
        self.t0
    }

    /// Number of pre-treatment periods (those `<= t0`).
    pub fn n_pre(&self) -> usize {
        (self.t0 - self.periods[0] + 1) as usize
    }

    pub fn pre_period(&self) -> &[i32] {
        &self.periods[..self.n_pre()]
    }

    pub fn post_period(&self) -> &[i32] {
        &self.periods[self.n_pre()..]
    }

    pub fn period_index(&self, year: i32) -> Option<usize> {
        let i = year.checked_sub(self.periods[0])?;
        (i >= 0 && (i as usize) < self.periods.len()).then_some(i as usize)
    }

    pub fn outcome_index(&self, outcome: &str) -> Result<usize, PanelError> {
        self.outcomes
            .iter()
            .position(|o| o == outcome)
            .ok_or_else(|| PanelError::UnknownOutcome(outcome.to_string()))
    }

    pub fn unit_index(&self, unit: &str) -> Result<usize, PanelError> {
        self.units
            .iter()
            .position(|u| u == unit)
            .ok_or_else(|| PanelError::UnknownUnit(unit.to_string()))
    }

    /// Units × periods matrix for `outcome`.
    pub fn matrix(&self, outcome: &str) -> Result<&DMatrix<f64>, PanelError> {
        Ok(&self.values[self.outcome_index(outcome)?])
    }

    pub fn series(&self, outcome: &str, unit: usize) -> Result<DVector<f64>, PanelError> {
        Ok(self.matrix(outcome)?.row(unit).transpose())
    }

    /// Re-anchor the panel on `treated` (an index into `units`), keeping
    /// `donors` (indices) in the given order.
    pub fn reassign(&self, treated: usize, donors: &[usize]) -> Result<Self, PanelError> {
        let rows: Vec<usize> = std::iter::once(treated).chain(donors.iter().copied()).collect();
        let units = rows.iter().map(|&i| self.units[i].clone()).collect();
        let values = self
            .values
            .iter()
            .map(|m| DMatrix::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)]))
            .collect();
        let panel = Self {
            units,
            periods: self.periods.clone(),
            outcomes: self.outcomes.clone(),
            values,
            t0: self.t0,
        };
        panel.validate()?;
        Ok(panel)
    }

    /// Keep the treated unit and only the named donors, in the given order.
    pub fn select_donors(&self, donors: &[String]) -> Result<Self, PanelError> {
        let idx = donors
            .iter()
            .map(|d| self.unit_index(d))
            .collect::<Result<Vec<_>, _>>()?;
        self.reassign(0, &idx)
    }

    /// Drop every period after `last`, then set a new treatment date.
    pub fn truncate(&self, last: i32, t0: i32) -> Result<Self, PanelError> {
        let keep = self
            .period_index(last)
            .map(|i| i + 1)
            .unwrap_or(self.periods.len());
        let panel = Self {
            units: self.units.clone(),
            periods: self.periods[..keep].to_vec(),
            outcomes: self.outcomes.clone(),
            values: self.values.iter().map(|m| m.columns(0, keep).into_owned()).collect(),
            t0,
        };
        panel.validate()?;
        Ok(panel)
    }

    /// Copy of the panel with `outcome` replaced (or appended when new).
    pub fn with_outcome(&self, outcome: &str, values: DMatrix<f64>) -> Self {
        assert_eq!(values.shape(), (self.units.len(), self.periods.len()));
        let mut next = self.clone();
        match self.outcomes.iter().position(|o| o == outcome) {
            Some(k) => next.values[k] = values,
            None => {
                next.outcomes.push(outcome.to_string());
                next.values.push(values);
            }
        }
        next
    }

    pub fn to_observations(&self) -> Vec<PanelObservation> {
        let mut out = Vec::with_capacity(self.units.len() * self.periods.len() * self.outcomes.len());
        for (o, m) in self.outcomes.iter().zip(&self.values) {
            for (i, u) in self.units.iter().enumerate() {
                for (t, &p) in self.periods.iter().enumerate() {
                    out.push(PanelObservation {
                        unit: u.clone(),
                        period: p,
                        outcome: o.clone(),
                        value: m[(i, t)],
                    });
                }
            }
        }
        out
    }
}

/// Assemble observations into a balanced panel; every missing cell is reported.
pub fn build_panel(
    obs: &[PanelObservation],
    assignment: &TreatmentAssignment,
) -> Result<BalancedPanel, PanelError> {
    if obs.is_empty() {
        return Err(PanelError::Empty);
    }
    let mut units: Vec<String> = Vec::new();
    let mut outcomes: Vec<String> = Vec::new();
    let mut unit_pos = HashMap::new();
    let mut outcome_pos = HashMap::new();
    for o in obs {
        if !unit_pos.contains_key(&o.unit) {
            unit_pos.insert(o.unit.clone(), units.len());
            units.push(o.unit.clone());
        }
        if !outcome_pos.contains_key(&o.outcome) {
            outcome_pos.insert(o.outcome.clone(), outcomes.len());
            outcomes.push(o.outcome.clone());
        }
    }
    let treated = *unit_pos
        .get(&assignment.treated_unit)
        .ok_or_else(|| PanelError::TreatedUnitMissing(assignment.treated_unit.clone()))?;
    let order: Vec<usize> = std::iter::once(treated)
        .chain((0..units.len()).filter(|&i| i != treated))
        .collect();
    let mut row_of = vec![0; units.len()];
    for (row, &u) in order.iter().enumerate() {
        row_of[u] = row;
    }

    let first = obs.iter().map(|o| o.period).min().unwrap_or(0);
    let last = obs.iter().map(|o| o.period).max().unwrap_or(0);
    let n_periods = (last - first + 1) as usize;

    let mut values = vec![DMatrix::from_element(units.len(), n_periods, f64::NAN); outcomes.len()];
    let mut filled = vec![vec![false; units.len() * n_periods]; outcomes.len()];
    for o in obs {
        let k = outcome_pos[&o.outcome];
        let r = row_of[unit_pos[&o.unit]];
        let c = (o.period - first) as usize;
        if filled[k][r * n_periods + c] {
            return Err(PanelError::DuplicateKey {
                unit: o.unit.clone(),
                period: o.period,
                outcome: o.outcome.clone(),
            });
        }
        filled[k][r * n_periods + c] = true;
        values[k][(r, c)] = o.value;
    }

    let mut missing = Vec::new();
    for (k, outcome) in outcomes.iter().enumerate() {
        for (r, &u) in order.iter().enumerate() {
            for c in 0..n_periods {
                if !filled[k][r * n_periods + c] {
                    missing.push(MissingCell {
                        unit: units[u].clone(),
                        period: first + c as i32,
                        outcome: outcome.clone(),
                    });
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(PanelError::UnbalancedPanel(missing));
    }

    let units = order.iter().map(|&u| units[u].clone()).collect();
    BalancedPanel::from_matrices(units, first, outcomes, values, assignment.t0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(units: &[&str], periods: std::ops::RangeInclusive<i32>) -> Vec<PanelObservation> {
        let mut v = Vec::new();
        for (i, u) in units.iter().enumerate() {
            for p in periods.clone() {
                v.push(PanelObservation {
                    unit: u.to_string(),
                    period: p,
                    outcome: "y".into(),
                    value: (i as f64) * 10.0 + p as f64,
                });
            }
        }
        v
    }

    fn assign(t0: i32) -> TreatmentAssignment {
        TreatmentAssignment { treated_unit: "B".into(), t0 }
    }

    #[test]
    fn parses_two_rows() {
        let csv = "unit,period,outcome,value\nIRN,1996,gdp,27.26\nIRN,1997,gdp,27.28\n";
        let obs = load_long_csv(csv.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(obs.len(), 2);
        assert_eq!(obs[1].period, 1997);
        assert_eq!(obs[1].value, 27.28);
    }

    #[test]
    fn custom_schema_columns() {
        let csv = "value,country,year,series\n1.5,IRN,2000,gdp\n";
        let schema = CsvSchema {
            unit: "country".into(),
            period: "year".into(),
            outcome: "series".into(),
            value: "value".into(),
        };
        let obs = load_long_csv(csv.as_bytes(), &schema).unwrap();
        assert_eq!(obs[0].unit, "IRN");
        assert_eq!(obs[0].outcome, "gdp");
    }

    #[test]
    fn duplicate_key_rejected() {
        let csv = "unit,period,outcome,value\nIRN,1996,gdp,1\nIRN,1996,gdp,2\n";
        let err = load_long_csv(csv.as_bytes(), &CsvSchema::default()).unwrap_err();
        assert_eq!(
            err,
            PanelError::DuplicateKey { unit: "IRN".into(), period: 1996, outcome: "gdp".into() }
        );
    }

    #[test]
    fn row_errors() {
        let s = CsvSchema::default();
        let bad_width = "unit,period,outcome,value\nIRN,1996,gdp\n";
        assert!(matches!(
            load_long_csv(bad_width.as_bytes(), &s),
            Err(PanelError::MalformedRow { line: 2, expected: 4, found: 3 })
        ));
        let nan = "unit,period,outcome,value\nIRN,1996,gdp,abc\n";
        assert!(matches!(load_long_csv(nan.as_bytes(), &s), Err(PanelError::NonNumericValue { .. })));
        let inf = "unit,period,outcome,value\nIRN,1996,gdp,inf\n";
        assert!(matches!(load_long_csv(inf.as_bytes(), &s), Err(PanelError::NonNumericValue { .. })));
        let empty = "unit,period,outcome,value\nIRN,1996,gdp,\n";
        assert!(matches!(load_long_csv(empty.as_bytes(), &s), Err(PanelError::EmptyValue { .. })));
        let missing_col = "unit,year,outcome,value\n";
        assert_eq!(
            load_long_csv(missing_col.as_bytes(), &s).unwrap_err(),
            PanelError::MissingColumn("period".into())
        );
    }

    #[test]
    fn builds_balanced_grid_treated_first() {
        let obs = grid(&["A", "B", "C"], 1..=4);
        let panel = build_panel(&obs, &assign(2)).unwrap();
        assert_eq!(panel.units(), ["B", "A", "C"]);
        assert_eq!(panel.pre_period(), [1, 2]);
        assert_eq!(panel.post_period(), [3, 4]);
        let m = panel.matrix("y").unwrap();
        assert_eq!(m[(0, 0)], 11.0);
        assert_eq!(m[(1, 3)], 4.0);
    }

    #[test]
    fn missing_cell_is_named() {
        let mut obs = grid(&["A", "B", "C"], 1..=4);
        obs.retain(|o| !(o.unit == "C" && o.period == 3));
        let err = build_panel(&obs, &assign(2)).unwrap_err();
        assert_eq!(
            err,
            PanelError::UnbalancedPanel(vec![MissingCell { unit: "C".into(), period: 3, outcome: "y".into() }])
        );
        assert!(err.to_string().contains("(C, 3, y)"));
    }

    #[test]
    fn window_boundaries() {
        let obs = grid(&["A", "B", "C"], 1..=4);
        assert_eq!(build_panel(&obs, &assign(4)).unwrap_err(), PanelError::NoPostPeriods(4));
        assert_eq!(build_panel(&obs, &assign(1)).unwrap_err(), PanelError::InsufficientPrePeriods(1));
        let obs3 = grid(&["A", "B", "C"], 1..=3);
        let p = build_panel(&obs3, &assign(2)).unwrap();
        assert_eq!(p.pre_period(), [1, 2]);
        assert_eq!(p.post_period(), [3]);
        let missing = TreatmentAssignment { treated_unit: "Z".into(), t0: 2 };
        assert_eq!(build_panel(&obs, &missing).unwrap_err(), PanelError::TreatedUnitMissing("Z".into()));
        let two = grid(&["A", "B"], 1..=4);
        assert_eq!(build_panel(&two, &assign(2)).unwrap_err(), PanelError::InsufficientDonors(1));
    }

    #[test]
    fn replication_window_split() {
        let obs = grid(&["A", "B", "C"], 1996..=2024);
        let p = build_panel(&obs, &assign(2006)).unwrap();
        assert_eq!(p.pre_period().len(), 11);
        assert_eq!(p.pre_period().first(), Some(&1996));
        assert_eq!(p.pre_period().last(), Some(&2006));
        assert_eq!(p.post_period().len(), 18);
        assert_eq!(p.post_period().first(), Some(&2007));
    }

    #[test]
    fn reassign_and_truncate() {
        let obs = grid(&["A", "B", "C", "D"], 1..=6);
        let p = build_panel(&obs, &assign(3)).unwrap();
        let q = p.reassign(2, &[1, 3]).unwrap();
        assert_eq!(q.units(), ["C", "A", "D"]);
        assert_eq!(q.matrix("y").unwrap()[(0, 0)], 21.0);
        let t = p.truncate(3, 2).unwrap();
        assert_eq!(t.periods(), [1, 2, 3]);
        assert_eq!(t.post_period(), [3]);
        let s = p.select_donors(&["D".into(), "A".into()]).unwrap();
        assert_eq!(s.units(), ["B", "D", "A"]);
    }
}
