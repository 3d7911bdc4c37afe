//! Command-line driver for `synthpanel`: ingest, fit, placebo, gsc,
//! simulate, report and fetch.

pub mod config;
pub mod error;
pub mod fetch;
pub mod pipeline;
pub mod report;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use synthpanel::dgp::{simulate_convex_panel, simulate_factor_panel, DgpMode, DgpSpec};
use synthpanel::panel::{write_long_csv, PanelObservation};
use synthpanel::rng;

use config::{RunConfig, SimulateConfig};
use error::CliError;
use pipeline::Stages;

#[derive(Debug, Parser)]
#[command(name = "synthpanel", version, about = "Synthetic control and generalized synthetic control for country panels")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config value.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output path; overrides the config value.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load, filter and transform the panel; write it back as long CSV.
    Ingest,
    /// Synthetic control fit for every outcome.
    Fit,
    /// Fit plus in-space and configured in-time placebos.
    Placebo,
    /// Interactive fixed effects counterfactual with bootstrap inference.
    Gsc,
    /// Generate a synthetic panel with a known effect.
    Simulate(SimulateArgs),
    /// Every enabled stage plus the summary tables.
    Report,
    /// Convert or download World Bank indicators into long CSV.
    Fetch(FetchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Convex,
    Factor,
    TwoWayFe,
}

impl From<ModeArg> for DgpMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Convex => DgpMode::ConvexCombination,
            ModeArg::Factor => DgpMode::FactorModel,
            ModeArg::TwoWayFe => DgpMode::TwoWayFe,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Constant post-treatment effect.
    #[arg(long, allow_negative_numbers = true)]
    pub effect: Option<f64>,
    #[arg(long)]
    pub units: Option<usize>,
    #[arg(long)]
    pub periods: Option<usize>,
    #[arg(long)]
    pub t0: Option<i32>,
    #[arg(long)]
    pub factors: Option<usize>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
}

#[derive(Debug, clap::Args)]
pub struct FetchArgs {
    /// WDI CSV, saved API JSON, or API base URL.
    #[arg(long)]
    pub source: String,
    /// `CODE=outcome`, repeatable.
    #[arg(long = "series", required = true)]
    pub series: Vec<fetch::SeriesMap>,
    /// Comma-separated ISO3 codes.
    #[arg(long, value_delimiter = ',')]
    pub countries: Vec<String>,
    #[arg(long)]
    pub first_period: Option<i32>,
    #[arg(long)]
    pub last_period: Option<i32>,
}

fn load_run_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli.config.as_deref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    cli.out.clone().or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn run_stages(cli: &Cli, stages: impl FnOnce(&RunConfig) -> Stages) -> Result<(), CliError> {
    let cfg = load_run_config(cli)?;
    let out = out_dir(cli, &cfg);
    let summary = pipeline::run(&cfg, stages(&cfg), &out)?;
    if summary.failures.is_empty() {
        return Ok(());
    }
    Err(CliError::OutcomesFailed {
        failed: summary.failures.len(),
        total: cfg.outcomes.len(),
        code: summary.failures.iter().map(|f| f.exit_code).max().unwrap_or(3),
        messages: summary.failures.iter().map(|f| format!("{}: {}", f.outcome, f.error)).collect(),
    })
}

#[derive(Serialize)]
struct Truth<'a> {
    outcome: &'a str,
    seed: u64,
    att: &'a [f64],
    untreated: &'a [f64],
    weights: Option<&'a [f64]>,
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => SimulateConfig::load(p)?,
        None => SimulateConfig { out: None, unit_names: Vec::new(), outcomes: Vec::new(), effect: 0.0, dgp: DgpSpec::default() },
    };
    let d = &mut cfg.dgp;
    if let Some(s) = cli.seed {
        d.seed = s;
    }
    if let Some(m) = args.mode {
        d.mode = m.into();
    }
    if let Some(u) = args.units {
        d.units = u;
    }
    if let Some(p) = args.periods {
        d.periods = p;
    }
    if let Some(t) = args.t0 {
        d.t0 = t;
    }
    if let Some(r) = args.factors {
        d.r = r;
    }
    if let Some(n) = args.noise_sd {
        d.noise_sd = n;
    }
    if let Some(e) = args.effect {
        cfg.effect = e;
    }
    if cfg.effect != 0.0 || cfg.dgp.effect.len() != cfg.dgp.n_post() {
        cfg.dgp = cfg.dgp.clone().with_constant_effect(cfg.effect);
    }
    if !cfg.unit_names.is_empty() && cfg.unit_names.len() != cfg.dgp.units {
        return Err(CliError::Config(format!(
            "unit_names: {} names for {} units",
            cfg.unit_names.len(),
            cfg.dgp.units
        )));
    }
    let out = cli.out.clone().or(cfg.out.clone()).unwrap_or_else(|| PathBuf::from("simulated.csv"));
    let names: Vec<String> = if cfg.outcomes.is_empty() { vec![cfg.dgp.outcome.clone()] } else { cfg.outcomes.clone() };
    let mut obs: Vec<PanelObservation> = Vec::new();
    let mut truth = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let seed = if k == 0 { cfg.dgp.seed } else { rng::derive_seed(cfg.dgp.seed, "simulate-outcome", k as u64) };
        let spec = DgpSpec { outcome: name.clone(), seed, ..cfg.dgp.clone() };
        let sim = match spec.mode {
            DgpMode::ConvexCombination => simulate_convex_panel(&spec)?,
            DgpMode::FactorModel | DgpMode::TwoWayFe => simulate_factor_panel(&spec)?,
        };
        let units = sim.panel.units().to_vec();
        for mut o in sim.panel.to_observations() {
            if !cfg.unit_names.is_empty() {
                let i = units.iter().position(|u| u == &o.unit).expect("unit from panel");
                o.unit = cfg.unit_names[i].clone();
            }
            obs.push(o);
        }
        truth.push((name.clone(), seed, sim));
    }
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_long_csv(std::fs::File::create(&out)?, &obs)?;
    let truth: Vec<Truth> = truth
        .iter()
        .map(|(name, seed, s)| Truth {
            outcome: name,
            seed: *seed,
            att: &s.att,
            untreated: &s.untreated,
            weights: s.weights.as_deref(),
        })
        .collect();
    let mut side = out.into_os_string();
    side.push(".truth.json");
    std::fs::write(side, serde_json::to_string_pretty(&truth)? + "\n")?;
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Ingest => {
            let cfg = load_run_config(cli)?;
            pipeline::ingest(&cfg, &out_dir(cli, &cfg))?;
            Ok(())
        }
        Command::Fit => run_stages(cli, |_| Stages { fit: true, placebo: false, gsc: false }),
        Command::Placebo => run_stages(cli, |_| Stages { fit: true, placebo: true, gsc: false }),
        Command::Gsc => run_stages(cli, |_| Stages { fit: false, placebo: false, gsc: true }),
        Command::Report => run_stages(cli, Stages::from_config),
        Command::Simulate(args) => simulate(cli, args),
        Command::Fetch(args) => {
            let req = fetch::FetchRequest {
                source: args.source.clone(),
                series: args.series.clone(),
                countries: args.countries.clone(),
                first_period: args.first_period,
                last_period: args.last_period,
                out: cli.out.clone().unwrap_or_else(|| PathBuf::from("panel.csv")),
            };
            fetch::fetch(&req)?;
            Ok(())
        }
    }
}

/// Parse-free entry point used by `main` and tests.
pub fn run_cli(cli: &Cli) -> Result<(), CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        builder = builder.num_threads(j);
    }
    let pool = builder.build().map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli))
}

/// Convenience for callers holding a config path.
pub fn run_report(config: &Path, out: &Path, jobs: Option<usize>) -> Result<(), CliError> {
    run_cli(&Cli {
        config: Some(config.to_path_buf()),
        seed: None,
        out: Some(out.to_path_buf()),
        jobs,
        command: Command::Report,
    })
}
