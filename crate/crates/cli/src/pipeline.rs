//! Stage orchestration: data preparation, per-outcome runs, summary tables.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use synthpanel::gsc::{gsc_fit, gsc_in_time_placebo, BootstrapConfig, GscFit, GscInTime};
use synthpanel::magnitude::{translate_magnitude, Magnitude, MagnitudeInput};
use synthpanel::panel::{build_panel, load_long_csv, write_long_csv, BalancedPanel, TreatmentAssignment};
use synthpanel::placebo::{self, EffectSummary, InTimePlacebo, PlaceboSummary};
use synthpanel::rng;
use synthpanel::scm::{self, FitDiagnostics, FitOptions, ScmFit, VSearchOptions, WeightVector};
use synthpanel::transform::{principal_component_index, transform_outcome, PrincipalComponentResult};

use crate::config::{OutcomeConfig, RunConfig};
use crate::error::CliError;
use crate::report;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stages {
    pub fit: bool,
    pub placebo: bool,
    pub gsc: bool,
}

impl Stages {
    /// Stages a full report runs: fit always, the rest per config toggles.
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self { fit: true, placebo: cfg.placebo.enabled, gsc: cfg.gsc.enabled }
    }
}

/// Panel after filtering, composite indices and transforms.
pub struct PreparedData {
    pub panel: BalancedPanel,
    pub indices: Vec<(String, PrincipalComponentResult)>,
}

pub fn prepare(cfg: &RunConfig) -> Result<PreparedData, CliError> {
    let file = File::open(&cfg.data.path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", cfg.data.path.display())))?;
    let obs = load_long_csv(file, &cfg.data.schema)?;
    let needed: Vec<String> = cfg
        .outcomes
        .iter()
        .filter(|o| !cfg.indices.iter().any(|i| i.id == o.id))
        .map(|o| o.id.clone())
        .chain(cfg.indices.iter().flat_map(|i| i.indicators.iter().cloned()))
        .collect();
    for (i, id) in needed.iter().enumerate() {
        if !obs.iter().any(|o| &o.outcome == id) {
            let field = cfg
                .outcomes
                .iter()
                .position(|o| &o.id == id)
                .map(|k| format!("outcomes[{k}].id"))
                .unwrap_or_else(|| format!("indices indicator #{i}"));
            return Err(CliError::Config(format!("{field}: outcome `{id}` not present in data")));
        }
    }
    for (k, unit) in std::iter::once(&cfg.treated_unit).chain(&cfg.donors).enumerate() {
        if !obs.iter().any(|o| &o.unit == unit) {
            let field = if k == 0 { "treated_unit".to_string() } else { format!("donors[{}]", k - 1) };
            return Err(CliError::Config(format!("{field}: unit `{unit}` not present in data")));
        }
    }
    let in_window = |p: i32| {
        cfg.data.first_period.is_none_or(|f| p >= f) && cfg.data.last_period.is_none_or(|l| p <= l)
    };
    let keep: Vec<_> = obs
        .into_iter()
        .filter(|o| needed.contains(&o.outcome))
        .filter(|o| o.unit == cfg.treated_unit || cfg.donors.contains(&o.unit))
        .filter(|o| in_window(o.period))
        .collect();
    let assignment = TreatmentAssignment { treated_unit: cfg.treated_unit.clone(), t0: cfg.t0 };
    let mut panel = build_panel(&keep, &assignment)?.select_donors(&cfg.donors)?;
    let mut indices = Vec::new();
    for idx in &cfg.indices {
        let (pc, next) = principal_component_index(&panel, &idx.indicators, &idx.id)?;
        panel = next;
        indices.push((idx.id.clone(), pc));
    }
    for o in &cfg.outcomes {
        panel = transform_outcome(&panel, &o.id, &o.transform)?;
    }
    Ok(PreparedData { panel, indices })
}

/// Everything produced for one outcome; absent stages are `None`.
#[derive(Debug, Clone, Serialize)]
pub struct OutcomeReport {
    pub id: String,
    pub label: String,
    pub fit: Option<FitRecord>,
    pub placebo: Option<PlaceboSummary>,
    pub in_time: Vec<InTimeRecord>,
    pub gsc: Option<GscRecord>,
    pub magnitude: Option<Magnitude>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitRecord {
    pub diagnostics: FitDiagnostics,
    pub effect: EffectSummary,
    pub weights: WeightVector,
}

#[derive(Debug, Clone, Serialize)]
pub struct InTimeRecord {
    pub pseudo_t0: i32,
    pub average_effect: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GscRecord {
    pub r: usize,
    pub average_att: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub p_value: Option<f64>,
    pub in_time: Option<GscInTimeRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GscInTimeRecord {
    pub pseudo_t0: i32,
    pub average_att: f64,
    pub p_value: Option<f64>,
    pub anticipation_flag: bool,
}

fn outcome_seed(seed: u64, id: &str) -> u64 {
    rng::derive_seed(seed, &format!("outcome:{id}"), 0)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn run_outcome(
    cfg: &RunConfig,
    panel: &BalancedPanel,
    oc: &OutcomeConfig,
    stages: Stages,
    dir: &Path,
) -> Result<OutcomeReport, CliError> {
    fs::create_dir_all(dir)?;
    let seed = outcome_seed(cfg.seed, &oc.id);
    let opts = FitOptions {
        predictors: oc.predictors.clone().unwrap_or_else(|| cfg.predictors.clone()),
        v_search: VSearchOptions { seed, ..cfg.v_search },
    };
    let mut report = OutcomeReport {
        id: oc.id.clone(),
        label: oc.label().to_string(),
        fit: None,
        placebo: None,
        in_time: Vec::new(),
        gsc: None,
        magnitude: None,
    };

    if stages.fit || stages.placebo {
        let (fit, dist) = if stages.placebo {
            let dist = placebo::in_space(panel, &oc.id, &opts)?;
            let fit = dist
                .treated()
                .and_then(|e| e.fit.clone())
                .ok_or_else(|| CliError::Numerical(format!("treated refit failed: {:?}", dist.entries[0].status)))?;
            (fit, Some(dist))
        } else {
            (scm::fit(panel, &oc.id, &opts)?, None)
        };
        write_fit_artifacts(&fit, dir)?;
        let mut effect = scm::effect_summary(&fit)?;
        if let Some(dist) = &dist {
            let summary = placebo::summarize(dist, cfg.placebo.alpha, cfg.placebo.level)?;
            effect = summary.effect.clone();
            dist.write_csv(create(&dir.join("placebo_units.csv"))?)?;
            dist.write_gap_paths(create(&dir.join("placebo_gaps.csv"))?)?;
            write_json(&dir.join("placebo_summary.json"), &summary)?;
            report.placebo = Some(summary);
            for &year in &cfg.placebo.in_time {
                let it = placebo::in_time(panel, &oc.id, year, &opts)?;
                write_in_time(&it, dir)?;
                report.in_time.push(InTimeRecord {
                    pseudo_t0: year,
                    average_effect: it.summary.average_effect,
                    p_value: it.p_value.p,
                });
            }
        }
        write_json(&dir.join("effect.json"), &effect)?;
        if let Some(m) = &oc.magnitude {
            let mag = translate_magnitude(&MagnitudeInput {
                log_gaps: fit.post_gaps().to_vec(),
                baseline: m.baseline,
                horizon: m.horizon,
            })?;
            write_json(&dir.join("magnitude.json"), &mag)?;
            report.magnitude = Some(mag);
        }
        report.fit = Some(FitRecord { diagnostics: fit.diagnostics.clone(), effect, weights: fit.weights.clone() });
    }

    if stages.gsc {
        let boot = BootstrapConfig { seed: rng::derive_seed(seed, "gsc", 0), ..cfg.gsc.bootstrap };
        let g = gsc_fit(panel, &oc.id, cfg.gsc.factors(), Some(&boot))?;
        write_json(&dir.join("gsc_fit.json"), &g)?;
        g.write_csv(create(&dir.join("gsc_paths.csv"))?)?;
        let in_time = match cfg.gsc.in_time_backdate {
            Some(k) => {
                let it = gsc_in_time_placebo(panel, &oc.id, k, cfg.gsc.factors(), Some(&boot))?;
                write_gsc_in_time(&it, dir)?;
                Some(GscInTimeRecord {
                    pseudo_t0: it.pseudo_t0,
                    average_att: it.average_att,
                    p_value: it.p_value,
                    anticipation_flag: it.anticipation_flag,
                })
            }
            None => None,
        };
        report.gsc = Some(gsc_record(&g, in_time));
    }
    Ok(report)
}

fn gsc_record(g: &GscFit, in_time: Option<GscInTimeRecord>) -> GscRecord {
    GscRecord {
        r: g.r,
        average_att: g.average_att,
        ci_low: g.average_ci.as_ref().map(|c| c.low),
        ci_high: g.average_ci.as_ref().map(|c| c.high),
        p_value: g.p_value,
        in_time,
    }
}

fn write_fit_artifacts(fit: &ScmFit, dir: &Path) -> Result<(), CliError> {
    write_json(&dir.join("scm_fit.json"), fit)?;
    fit.write_gap_csv(create(&dir.join("scm_paths.csv"))?)?;
    let mut w = csv::Writer::from_writer(create(&dir.join("weights.csv"))?);
    w.write_record(["donor", "weight"])?;
    for (d, v) in fit.weights.donors.iter().zip(&fit.weights.weights) {
        w.write_record([d.clone(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct InTimeArtifact<'a> {
    pseudo_t0: i32,
    summary: &'a EffectSummary,
    p_value: &'a placebo::PermutationP,
    weights: &'a WeightVector,
    diagnostics: &'a FitDiagnostics,
}

fn write_in_time(it: &InTimePlacebo, dir: &Path) -> Result<(), CliError> {
    let path = dir.join(format!("in_time_{}.json", it.pseudo_t0));
    write_json(
        &path,
        &InTimeArtifact {
            pseudo_t0: it.pseudo_t0,
            summary: &it.summary,
            p_value: &it.p_value,
            weights: &it.fit.weights,
            diagnostics: &it.fit.diagnostics,
        },
    )?;
    it.fit.write_gap_csv(create(&dir.join(format!("in_time_{}_paths.csv", it.pseudo_t0)))?)?;
    Ok(())
}

fn write_gsc_in_time(it: &GscInTime, dir: &Path) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Artifact<'a> {
        pseudo_t0: i32,
        backdate: usize,
        r: usize,
        average_att: f64,
        p_value: Option<f64>,
        anticipation_flag: bool,
        att_path: &'a [synthpanel::gsc::AttPoint],
    }
    write_json(
        &dir.join("gsc_in_time.json"),
        &Artifact {
            pseudo_t0: it.pseudo_t0,
            backdate: it.backdate,
            r: it.fit.r,
            average_att: it.average_att,
            p_value: it.p_value,
            anticipation_flag: it.anticipation_flag,
            att_path: &it.fit.att_path,
        },
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub outcome: String,
    pub exit_code: i32,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub treated_unit: String,
    pub t0: i32,
    pub seed: u64,
    pub donors: Vec<String>,
    pub periods: (i32, i32),
    pub indices: Vec<IndexSummary>,
    pub outcomes: Vec<OutcomeReport>,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IndexSummary {
    pub id: String,
    pub loadings: Vec<f64>,
    pub explained_variance_ratio: f64,
}

/// Run the requested stages for every outcome under `out`, then write the
/// combined summaries. Outcomes run concurrently; failures are isolated.
pub fn run(cfg: &RunConfig, stages: Stages, out: &Path) -> Result<RunSummary, CliError> {
    let data = prepare(cfg)?;
    fs::create_dir_all(out)?;
    let panel = &data.panel;
    let results: Vec<Result<OutcomeReport, CliError>> = cfg
        .outcomes
        .par_iter()
        .map(|oc| run_outcome(cfg, panel, oc, stages, &out.join(&oc.id)))
        .collect();
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (oc, r) in cfg.outcomes.iter().zip(results) {
        match r {
            Ok(rep) => outcomes.push(rep),
            Err(e) => failures.push(Failure { outcome: oc.id.clone(), exit_code: e.exit_code(), error: e.to_string() }),
        }
    }
    let summary = RunSummary {
        treated_unit: cfg.treated_unit.clone(),
        t0: cfg.t0,
        seed: cfg.seed,
        donors: panel.donors().to_vec(),
        periods: (panel.periods()[0], *panel.periods().last().expect("non-empty periods")),
        indices: data
            .indices
            .iter()
            .map(|(id, pc)| IndexSummary {
                id: id.clone(),
                loadings: pc.loadings.clone(),
                explained_variance_ratio: pc.explained_variance_ratio,
            })
            .collect(),
        outcomes,
        failures,
    };
    report::write_summaries(&summary, out)?;
    write_json(&out.join("run.json"), &summary)?;
    Ok(summary)
}

/// Write the prepared (filtered, transformed) panel as long CSV.
pub fn ingest(cfg: &RunConfig, out: &Path) -> Result<PathBuf, CliError> {
    let data = prepare(cfg)?;
    fs::create_dir_all(out)?;
    let path = out.join("panel.csv");
    write_long_csv(create(&path)?, &data.panel.to_observations())?;
    #[derive(Serialize)]
    struct Summary<'a> {
        treated_unit: &'a str,
        donors: &'a [String],
        outcomes: &'a [String],
        periods: &'a [i32],
        t0: i32,
        n_pre: usize,
        n_post: usize,
    }
    let p = &data.panel;
    write_json(
        &out.join("panel_summary.json"),
        &Summary {
            treated_unit: p.treated_unit(),
            donors: p.donors(),
            outcomes: p.outcomes(),
            periods: p.periods(),
            t0: p.t0(),
            n_pre: p.n_pre(),
            n_post: p.post_period().len(),
        },
    )?;
    Ok(path)
}
