//! Python bindings: panels, synthetic control fits, placebo inference,
//! generalized synthetic control and the simulation harness.
//!
//! Results come back as plain dicts and lists mirroring the JSON artifacts.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;
use synthpanel::dgp::{simulate_convex_panel, simulate_factor_panel, DgpMode, DgpSpec};
use synthpanel::gsc::{gsc_fit, BootstrapConfig, FactorCount};
use synthpanel::magnitude::{translate_magnitude as translate, MagnitudeInput};
use synthpanel::panel::{build_panel, load_long_csv, BalancedPanel, CsvSchema, PanelObservation, TreatmentAssignment};
use synthpanel::placebo::{classify_persistence as verdict_for, in_space, summarize, DEFAULT_ALPHA};
use synthpanel::scm::{self, FitOptions, VSearchOptions};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_f64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (None, Some(f)) => f.into_pyobject(py)?.into_any(),
            _ => py.None().into_bound(py),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn serialize<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &serde_json::to_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?)
}

/// Balanced unit × period panel; the treated unit is row 0.
#[pyclass(name = "Panel", module = "synthpanel_py", frozen)]
pub struct PyPanel {
    inner: BalancedPanel,
}

#[pymethods]
impl PyPanel {
    /// Build from `(unit, period, outcome, value)` records.
    #[new]
    fn new(records: Vec<(String, i32, String, f64)>, treated_unit: String, t0: i32) -> PyResult<Self> {
        let obs: Vec<PanelObservation> = records
            .into_iter()
            .map(|(unit, period, outcome, value)| PanelObservation { unit, period, outcome, value })
            .collect();
        let inner = build_panel(&obs, &TreatmentAssignment { treated_unit, t0 }).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Load a long CSV with `unit,period,outcome,value` columns.
    #[staticmethod]
    fn from_csv(path: &str, treated_unit: String, t0: i32) -> PyResult<Self> {
        let file = std::fs::File::open(path).map_err(value_err)?;
        let obs = load_long_csv(file, &CsvSchema::default()).map_err(value_err)?;
        let inner = build_panel(&obs, &TreatmentAssignment { treated_unit, t0 }).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Keep only `donors`, in the given order.
    fn select_donors(&self, donors: Vec<String>) -> PyResult<Self> {
        Ok(Self { inner: self.inner.select_donors(&donors).map_err(value_err)? })
    }

    #[getter]
    fn units(&self) -> Vec<String> {
        self.inner.units().to_vec()
    }

    #[getter]
    fn treated_unit(&self) -> String {
        self.inner.treated_unit().to_string()
    }

    #[getter]
    fn donors(&self) -> Vec<String> {
        self.inner.donors().to_vec()
    }

    #[getter]
    fn periods(&self) -> Vec<i32> {
        self.inner.periods().to_vec()
    }

    #[getter]
    fn outcomes(&self) -> Vec<String> {
        self.inner.outcomes().to_vec()
    }

    #[getter]
    fn t0(&self) -> i32 {
        self.inner.t0()
    }

    /// Rows are units (treated first), columns are periods.
    fn matrix(&self, outcome: &str) -> PyResult<Vec<Vec<f64>>> {
        let m = self.inner.matrix(outcome).map_err(value_err)?;
        Ok(m.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    fn to_records(&self) -> Vec<(String, i32, String, f64)> {
        self.inner.to_observations().into_iter().map(|o| (o.unit, o.period, o.outcome, o.value)).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Panel(treated={:?}, donors={}, periods={}..={}, t0={}, outcomes={:?})",
            self.inner.treated_unit(),
            self.inner.donors().len(),
            self.inner.periods()[0],
            self.inner.periods()[self.inner.periods().len() - 1],
            self.inner.t0(),
            self.inner.outcomes()
        )
    }
}

fn options(restarts: usize, max_evals: usize, seed: u64) -> FitOptions {
    FitOptions { v_search: VSearchOptions { restarts, max_evals, seed }, ..Default::default() }
}

/// Synthetic control fit: weights, V, paths, diagnostics and effect summary.
#[pyfunction]
#[pyo3(signature = (panel, outcome, restarts = 20, max_evals = 1000, seed = 0))]
fn fit<'py>(
    py: Python<'py>,
    panel: &PyPanel,
    outcome: &str,
    restarts: usize,
    max_evals: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let opts = options(restarts, max_evals, seed);
    let (f, effect) = py
        .detach(|| {
            let f = scm::fit(&panel.inner, outcome, &opts)?;
            let e = scm::effect_summary(&f)?;
            Ok::<_, scm::ScmError>((f, e))
        })
        .map_err(value_err)?;
    let out = serialize(py, &f)?;
    out.set_item("effect", serialize(py, &effect)?)?;
    Ok(out)
}

/// In-space placebo summary: permutation p-values, CI variants and verdict.
#[pyfunction]
#[pyo3(signature = (panel, outcome, alpha = DEFAULT_ALPHA, level = 0.95, restarts = 20, max_evals = 1000, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn placebo<'py>(
    py: Python<'py>,
    panel: &PyPanel,
    outcome: &str,
    alpha: f64,
    level: f64,
    restarts: usize,
    max_evals: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let opts = options(restarts, max_evals, seed);
    let summary = py
        .detach(|| {
            let dist = in_space(&panel.inner, outcome, &opts)?;
            summarize(&dist, alpha, level)
        })
        .map_err(value_err)?;
    serialize(py, &summary)
}

/// Interactive fixed effects counterfactual; `r=None` cross-validates over `0..=r_max`.
#[pyfunction]
#[pyo3(signature = (panel, outcome, r = None, r_max = 5, replications = 500, seed = 0, level = 0.95))]
#[allow(clippy::too_many_arguments)]
fn gsc<'py>(
    py: Python<'py>,
    panel: &PyPanel,
    outcome: &str,
    r: Option<usize>,
    r_max: usize,
    replications: usize,
    seed: u64,
    level: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let factors = r.map(FactorCount::Fixed).unwrap_or(FactorCount::Auto { r_max });
    let boot = (replications > 0).then(|| BootstrapConfig { replications, seed, level, ..Default::default() });
    let g = py.detach(|| gsc_fit(&panel.inner, outcome, factors, boot.as_ref())).map_err(value_err)?;
    serialize(py, &g)
}

/// Simulated panel with a constant effect; returns `(panel, truth)`.
#[pyfunction]
#[pyo3(signature = (mode = "factor", seed = 0, effect = 0.0, units = 13, periods = 29, first_period = 1996, t0 = 2006, r = 2, noise_sd = 0.05))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    mode: &str,
    seed: u64,
    effect: f64,
    units: usize,
    periods: usize,
    first_period: i32,
    t0: i32,
    r: usize,
    noise_sd: f64,
) -> PyResult<(PyPanel, Bound<'py, PyAny>)> {
    let mode = match mode {
        "factor" => DgpMode::FactorModel,
        "convex" => DgpMode::ConvexCombination,
        "twfe" => DgpMode::TwoWayFe,
        other => return Err(PyValueError::new_err(format!("unknown mode {other:?}; use factor, convex or twfe"))),
    };
    let spec = DgpSpec { units, periods, first_period, t0, r, noise_sd, mode, seed, ..Default::default() }
        .with_constant_effect(effect);
    let sim = match mode {
        DgpMode::ConvexCombination => simulate_convex_panel(&spec),
        _ => simulate_factor_panel(&spec),
    }
    .map_err(value_err)?;
    let truth = PyDict::new(py);
    truth.set_item("att", &sim.att)?;
    truth.set_item("untreated", &sim.untreated)?;
    truth.set_item("weights", sim.weights.clone())?;
    Ok((PyPanel { inner: sim.panel }, truth.into_any()))
}

/// Percent and level losses implied by log gaps.
#[pyfunction]
#[pyo3(signature = (log_gaps, baseline, horizon = None))]
fn translate_magnitude<'py>(
    py: Python<'py>,
    log_gaps: Vec<f64>,
    baseline: f64,
    horizon: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let m = translate(&MagnitudeInput { log_gaps, baseline, horizon }).map_err(value_err)?;
    serialize(py, &m)
}

/// Verdict label from left-tail p-values at t0+1 and at the end of the sample.
#[pyfunction]
#[pyo3(signature = (p_t0_plus_1, p_end, average_effect, alpha = DEFAULT_ALPHA))]
fn classify_persistence(p_t0_plus_1: f64, p_end: f64, average_effect: f64, alpha: f64) -> &'static str {
    verdict_for(p_t0_plus_1, p_end, average_effect, alpha).label()
}

#[pymodule]
fn synthpanel_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPanel>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(placebo, m)?)?;
    m.add_function(wrap_pyfunction!(gsc, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(translate_magnitude, m)?)?;
    m.add_function(wrap_pyfunction!(classify_persistence, m)?)?;
    m.add("DEFAULT_ALPHA", DEFAULT_ALPHA)?;
    Ok(())
}
