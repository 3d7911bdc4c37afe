//! TOML run configuration.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use synthpanel::dgp::DgpSpec;
use synthpanel::gsc::{BootstrapConfig, FactorCount};
use synthpanel::panel::CsvSchema;
use synthpanel::placebo::DEFAULT_ALPHA;
use synthpanel::scm::{PredictorSpec, VSearchOptions};
use synthpanel::transform::TransformSpec;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory; relative paths resolve against the config file.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub treated_unit: String,
    /// Last pre-treatment year.
    pub t0: i32,
    pub donors: Vec<String>,
    pub outcomes: Vec<OutcomeConfig>,
    /// Composite indices built from the first principal component of indicators.
    #[serde(default)]
    pub indices: Vec<IndexConfig>,
    #[serde(default)]
    pub predictors: PredictorSpec,
    #[serde(default)]
    pub v_search: VSearchOptions,
    #[serde(default)]
    pub placebo: PlaceboConfig,
    #[serde(default)]
    pub gsc: GscConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    #[serde(default)]
    pub schema: CsvSchema,
    #[serde(default)]
    pub first_period: Option<i32>,
    #[serde(default)]
    pub last_period: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeConfig {
    pub id: String,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub transform: TransformSpec,
    /// Overrides the run-wide predictor set.
    #[serde(default)]
    pub predictors: Option<PredictorSpec>,
    #[serde(default)]
    pub magnitude: Option<MagnitudeConfig>,
}

impl OutcomeConfig {
    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagnitudeConfig {
    /// Counterfactual level per year, e.g. constant-price GDP.
    pub baseline: f64,
    /// Years to accumulate; defaults to the post-treatment window.
    #[serde(default)]
    pub horizon: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexConfig {
    pub id: String,
    pub indicators: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlaceboConfig {
    pub enabled: bool,
    pub level: f64,
    pub alpha: f64,
    /// Pseudo treatment years for in-time placebos.
    pub in_time: Vec<i32>,
}

impl Default for PlaceboConfig {
    fn default() -> Self {
        Self { enabled: true, level: 0.95, alpha: DEFAULT_ALPHA, in_time: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GscConfig {
    pub enabled: bool,
    /// Fixed factor number; cross-validated over `0..=r_max` when absent.
    pub r: Option<usize>,
    pub r_max: usize,
    pub bootstrap: BootstrapConfig,
    /// Backdate for the in-time placebo, in periods.
    pub in_time_backdate: Option<usize>,
}

impl Default for GscConfig {
    fn default() -> Self {
        Self { enabled: false, r: None, r_max: 5, bootstrap: BootstrapConfig::default(), in_time_backdate: None }
    }
}

impl GscConfig {
    pub fn factors(&self) -> FactorCount {
        match self.r {
            Some(r) => FactorCount::Fixed(r),
            None => FactorCount::Auto { r_max: self.r_max },
        }
    }
}

fn config_err(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Parse, resolve relative paths against the file's directory, validate.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data.path = base.join(&cfg.data.path);
        if let Some(out) = &cfg.out_dir {
            cfg.out_dir = Some(base.join(out));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that do not need the data.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.donors.is_empty() {
            return Err(config_err("donors", "donor list is empty"));
        }
        if self.donors.iter().any(|d| d == &self.treated_unit) {
            return Err(config_err("donors", format!("treated unit `{}` listed as a donor", self.treated_unit)));
        }
        let mut seen = HashSet::new();
        for d in &self.donors {
            if !seen.insert(d) {
                return Err(config_err("donors", format!("duplicate donor `{d}`")));
            }
        }
        if self.outcomes.is_empty() {
            return Err(config_err("outcomes", "no outcomes configured"));
        }
        let mut ids = HashSet::new();
        for (i, o) in self.outcomes.iter().enumerate() {
            if !ids.insert(&o.id) {
                return Err(config_err(&format!("outcomes[{i}].id"), format!("duplicate outcome `{}`", o.id)));
            }
            if o.id.is_empty() || o.id.contains(['/', '\\']) || o.id.starts_with('.') {
                return Err(config_err(&format!("outcomes[{i}].id"), format!("`{}` is not a valid directory name", o.id)));
            }
            if let Some(m) = &o.magnitude {
                if m.baseline.is_nan() || m.baseline <= 0.0 {
                    return Err(config_err(&format!("outcomes[{i}].magnitude.baseline"), "must be positive"));
                }
            }
        }
        let p = &self.placebo;
        if !(p.level > 0.0 && p.level < 1.0) {
            return Err(config_err("placebo.level", "must lie in (0, 1)"));
        }
        if !(p.alpha > 0.0 && p.alpha < 1.0) {
            return Err(config_err("placebo.alpha", "must lie in (0, 1)"));
        }
        if let Some(y) = p.in_time.iter().find(|&&y| y >= self.t0) {
            return Err(config_err("placebo.in_time", format!("pseudo year {y} is not before t0 = {}", self.t0)));
        }
        if self.gsc.enabled {
            self.gsc.bootstrap.validate().map_err(|e| config_err("gsc.bootstrap", e))?;
        }
        Ok(())
    }
}

/// Configuration for `simulate`: one generated outcome per entry of `outcomes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub unit_names: Vec<String>,
    #[serde(default)]
    pub outcomes: Vec<String>,
    /// Constant effect on the treated unit after t0.
    #[serde(default)]
    pub effect: f64,
    pub dgp: DgpSpec,
}

impl SimulateConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(out) = &cfg.out {
            cfg.out = Some(path.parent().unwrap_or(Path::new(".")).join(out));
        }
        if !cfg.unit_names.is_empty() && cfg.unit_names.len() != cfg.dgp.units {
            return Err(config_err(
                "unit_names",
                format!("{} names for {} units", cfg.unit_names.len(), cfg.dgp.units),
            ));
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        treated_unit = "IRN"
        t0 = 2006
        donors = ["A", "B"]
        [data]
        path = "panel.csv"
        [[outcomes]]
        id = "gdp"
        transform = { kind = "log" }
    "#;

    #[test]
    fn minimal_config_defaults() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert!(cfg.placebo.enabled);
        assert!(!cfg.gsc.enabled);
        assert_eq!(cfg.predictors, PredictorSpec::AllPreLags);
        assert_eq!(cfg.v_search.restarts, 20);
    }

    #[test]
    fn treated_in_donors_is_rejected() {
        let text = MINIMAL.replace(r#"["A", "B"]"#, r#"["A", "IRN"]"#);
        let err = RunConfig::from_toml(&text).unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("donors"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn unknown_field_is_a_config_error() {
        let err = RunConfig::from_toml(&format!("{MINIMAL}\nbogus = 1")).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
