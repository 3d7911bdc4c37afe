use synthpanel::dgp::{simulate_convex_panel, simulate_factor_panel, DgpMode, DgpSpec};
use synthpanel::gsc::{gsc_fit, gsc_in_time_placebo, BootstrapConfig, FactorCount};
use synthpanel::panel::{build_panel, load_long_csv, write_long_csv, CsvSchema, TreatmentAssignment};
use synthpanel::placebo::{in_space, in_time, summarize, Verdict, DEFAULT_ALPHA};
use synthpanel::scm::{effect_summary, fit, FitOptions, VSearchOptions};
use synthpanel::transform::{principal_component_index, transform_outcome, TransformKind, TransformSpec};

fn light(seed: u64) -> FitOptions {
    FitOptions { v_search: VSearchOptions { restarts: 2, max_evals: 200, seed }, ..Default::default() }
}

#[test]
fn csv_round_trip_preserves_fit() {
    let sim = simulate_factor_panel(&DgpSpec { seed: 1, ..Default::default() }).unwrap();
    let mut buf = Vec::new();
    sim.write_csv(&mut buf).unwrap();
    let obs = load_long_csv(buf.as_slice(), &CsvSchema::default()).unwrap();
    let assignment = TreatmentAssignment { treated_unit: "treated".into(), t0: 2006 };
    let panel = build_panel(&obs, &assignment).unwrap();
    let a = fit(&sim.panel, "y", &light(0)).unwrap();
    let b = fit(&panel, "y", &light(0)).unwrap();
    assert_eq!(a, b);

    let mut again = Vec::new();
    write_long_csv(&mut again, &panel.to_observations()).unwrap();
    assert_eq!(buf, again);
}

#[test]
fn strong_negative_effect_is_flagged_permanent() {
    let spec = DgpSpec { seed: 4, mode: DgpMode::ConvexCombination, ..Default::default() }.with_constant_effect(-0.5);
    let sim = simulate_convex_panel(&spec).unwrap();
    let dist = in_space(&sim.panel, "y", &light(4)).unwrap();
    let s = summarize(&dist, DEFAULT_ALPHA, 0.95).unwrap();
    assert!((s.effect.average_effect + 0.5).abs() < 1e-6);
    assert_eq!(s.left_p_end.count, 1);
    assert_eq!(s.effect.verdict, Some(Verdict::PermanentNegative));
    let ci = s.ci.unwrap();
    assert!(ci.centered.low < -0.5 && -0.5 < ci.centered.high);
}

#[test]
fn in_time_placebo_fits_pseudo_pre_period_exactly() {
    let sim = simulate_convex_panel(&DgpSpec { seed: 8, mode: DgpMode::ConvexCombination, ..Default::default() })
        .unwrap();
    let it = in_time(&sim.panel, "y", 2001, &light(8)).unwrap();
    // six pseudo-pre years and twelve donors: zero-loss weights exist but are not unique
    assert!(it.fit.diagnostics.rmspe_pre < 1e-6, "{}", it.fit.diagnostics.rmspe_pre);
    assert_eq!(it.fit.n_pre(), 6);
    assert_eq!(it.fit.periods.last(), Some(&2006));
}

#[test]
fn scm_and_gsc_agree_in_sign_on_factor_panel() {
    let spec = DgpSpec { units: 21, periods: 30, first_period: 1, t0: 15, seed: 12, ..Default::default() }
        .with_constant_effect(-0.3);
    let sim = simulate_factor_panel(&spec).unwrap();
    let boot = BootstrapConfig { replications: 200, seed: 1, ..Default::default() };
    let g = gsc_fit(&sim.panel, "y", FactorCount::Auto { r_max: 4 }, Some(&boot)).unwrap();
    assert_eq!(g.r, 2);
    assert!((g.average_att + 0.3).abs() < 0.06, "{}", g.average_att);
    let ci = g.average_ci.unwrap();
    assert!(ci.high < 0.0);
    let it = gsc_in_time_placebo(&sim.panel, "y", 4, FactorCount::Fixed(2), Some(&boot)).unwrap();
    assert!(!it.anticipation_flag, "{:?}", it.p_value);
    let s = effect_summary(&fit(&sim.panel, "y", &light(12)).unwrap()).unwrap();
    assert!(s.average_effect < 0.0);
}

#[test]
fn composite_index_then_transform() {
    let mut panels = Vec::new();
    for (k, name) in ["a", "b", "c"].iter().enumerate() {
        let sim = simulate_factor_panel(&DgpSpec { seed: 20 + k as u64, outcome: name.to_string(), ..Default::default() })
            .unwrap();
        panels.push(sim.panel);
    }
    let mut obs: Vec<_> = panels.iter().flat_map(|p| p.to_observations()).collect();
    obs.sort_by(|x, y| (&x.unit, &x.outcome, x.period).cmp(&(&y.unit, &y.outcome, y.period)));
    let panel = build_panel(&obs, &TreatmentAssignment { treated_unit: "treated".into(), t0: 2006 }).unwrap();
    let (pc, panel) = principal_component_index(&panel, &["a".into(), "b".into(), "c".into()], "pc").unwrap();
    assert!((pc.loadings.iter().map(|l| l * l).sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(panel.outcomes().contains(&"pc".to_string()));
    let z = transform_outcome(&panel, "pc", &TransformSpec::new(TransformKind::Zscore)).unwrap();
    assert!(fit(&z, "pc", &light(0)).is_ok());
}
