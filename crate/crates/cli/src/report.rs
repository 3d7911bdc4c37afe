//! Cross-outcome summary tables and the Markdown digest.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::CliError;
use crate::pipeline::RunSummary;

fn num(x: f64) -> String {
    x.to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn fixed(x: Option<f64>, digits: usize) -> String {
    match x {
        Some(v) => format!("{v:.digits$}"),
        None => "n/a".into(),
    }
}

fn table(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Write every `summary_*.csv` plus `summary.md` into `out`.
pub fn write_summaries(s: &RunSummary, out: &Path) -> Result<(), CliError> {
    let fitted: Vec<_> = s.outcomes.iter().filter_map(|o| o.fit.as_ref().map(|f| (o, f))).collect();

    table(
        &out.join("summary_fit.csv"),
        &["outcome", "label", "rmspe_pre", "avg_control_bias_pct", "sc_bias_pct", "r2_pre"],
        fitted
            .iter()
            .map(|(o, f)| {
                let d = &f.diagnostics;
                vec![
                    o.id.clone(),
                    o.label.clone(),
                    num(d.rmspe_pre),
                    opt(d.avg_control_bias_pct),
                    num(d.sc_bias_pct),
                    num(d.r2_pre),
                ]
            })
            .collect(),
    )?;

    let donors: BTreeSet<&String> = fitted.iter().flat_map(|(_, f)| &f.weights.donors).collect();
    let mut header = vec!["donor"];
    header.extend(fitted.iter().map(|(o, _)| o.id.as_str()));
    table(
        &out.join("summary_weights.csv"),
        &header,
        donors
            .into_iter()
            .map(|d| {
                let mut row = vec![d.clone()];
                row.extend(fitted.iter().map(|(_, f)| opt(f.weights.get(d))));
                row
            })
            .collect(),
    )?;

    table(
        &out.join("summary_effects.csv"),
        &["outcome", "average_effect", "gap_sd", "end_of_sample_effect", "ci_low", "ci_high", "p_value", "verdict"],
        fitted
            .iter()
            .map(|(o, f)| {
                let e = &f.effect;
                vec![
                    o.id.clone(),
                    num(e.average_effect),
                    num(e.gap_sd),
                    num(e.end_of_sample_effect),
                    opt(e.ci.as_ref().map(|c| c.low)),
                    opt(e.ci.as_ref().map(|c| c.high)),
                    opt(e.p_value),
                    e.verdict.map(|v| v.label().to_string()).unwrap_or_default(),
                ]
            })
            .collect(),
    )?;

    let with_placebo: Vec<_> = s.outcomes.iter().filter_map(|o| o.placebo.as_ref().map(|p| (o, p))).collect();
    table(
        &out.join("summary_persistence.csv"),
        &[
            "outcome",
            "rmspe_ratio",
            "rmspe_ratio_p",
            "p_t0_plus_1",
            "p_end",
            "p_average_two_sided",
            "alpha",
            "verdict",
        ],
        with_placebo
            .iter()
            .map(|(o, p)| {
                vec![
                    o.id.clone(),
                    opt(p.rmspe_ratio),
                    opt(p.rmspe_ratio_p.as_ref().map(|x| x.p)),
                    num(p.left_p_t0_plus_1.p),
                    num(p.left_p_end.p),
                    num(p.two_sided_p_average.p),
                    num(p.alpha),
                    p.effect.verdict.map(|v| v.label().to_string()).unwrap_or_default(),
                ]
            })
            .collect(),
    )?;

    let with_gsc: Vec<_> = s.outcomes.iter().filter_map(|o| o.gsc.as_ref().map(|g| (o, g))).collect();
    table(
        &out.join("summary_gsc.csv"),
        &[
            "outcome",
            "r",
            "average_att",
            "ci_low",
            "ci_high",
            "p_value",
            "in_time_pseudo_t0",
            "in_time_att",
            "in_time_p",
            "anticipation_flag",
        ],
        with_gsc
            .iter()
            .map(|(o, g)| {
                let it = g.in_time.as_ref();
                vec![
                    o.id.clone(),
                    g.r.to_string(),
                    num(g.average_att),
                    opt(g.ci_low),
                    opt(g.ci_high),
                    opt(g.p_value),
                    it.map(|i| i.pseudo_t0.to_string()).unwrap_or_default(),
                    opt(it.map(|i| i.average_att)),
                    opt(it.and_then(|i| i.p_value)),
                    it.map(|i| i.anticipation_flag.to_string()).unwrap_or_default(),
                ]
            })
            .collect(),
    )?;

    let with_mag: Vec<_> = s.outcomes.iter().filter_map(|o| o.magnitude.as_ref().map(|m| (o, m))).collect();
    table(
        &out.join("summary_magnitude.csv"),
        &["outcome", "horizon", "average_pct_loss", "annual_loss", "cumulative_loss", "cumulative_loss_linear"],
        with_mag
            .iter()
            .map(|(o, m)| {
                vec![
                    o.id.clone(),
                    m.horizon.to_string(),
                    num(m.average_pct_loss),
                    num(m.annual_loss),
                    num(m.cumulative_loss),
                    num(m.cumulative_loss_linear),
                ]
            })
            .collect(),
    )?;

    fs::write(out.join("summary.md"), markdown(s))?;
    Ok(())
}

fn markdown(s: &RunSummary) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# Synthetic control report: {}\n", s.treated_unit);
    let _ = writeln!(
        md,
        "Periods {}-{}, last pre-treatment period {}, {} donors, seed {}.\n",
        s.periods.0,
        s.periods.1,
        s.t0,
        s.donors.len(),
        s.seed
    );
    let _ = writeln!(md, "## Pre-treatment fit\n");
    let _ = writeln!(md, "| Outcome | RMSPE | Avg. control bias % | SC bias % | R² |");
    let _ = writeln!(md, "|---|---:|---:|---:|---:|");
    for o in &s.outcomes {
        if let Some(f) = &o.fit {
            let d = &f.diagnostics;
            let _ = writeln!(
                md,
                "| {} | {:.4} | {} | {:.2} | {:.3} |",
                o.label,
                d.rmspe_pre,
                fixed(d.avg_control_bias_pct, 2),
                d.sc_bias_pct,
                d.r2_pre
            );
        }
    }
    let _ = writeln!(md, "\n## Effects\n");
    let _ = writeln!(md, "| Outcome | Average | SD | End of sample | 95% CI | p | Verdict |");
    let _ = writeln!(md, "|---|---:|---:|---:|---|---:|---|");
    for o in &s.outcomes {
        if let Some(f) = &o.fit {
            let e = &f.effect;
            let ci = e
                .ci
                .as_ref()
                .map(|c| format!("[{:.3}, {:.3}]", c.low, c.high))
                .unwrap_or_else(|| "n/a".into());
            let _ = writeln!(
                md,
                "| {} | {:.3} | {:.3} | {:.3} | {} | {} | {} |",
                o.label,
                e.average_effect,
                e.gap_sd,
                e.end_of_sample_effect,
                ci,
                fixed(e.p_value, 3),
                e.verdict.map(|v| v.label()).unwrap_or("n/a")
            );
        }
    }
    if s.outcomes.iter().any(|o| o.gsc.is_some()) {
        let _ = writeln!(md, "\n## Generalized synthetic control\n");
        let _ = writeln!(md, "| Outcome | r | ATT | CI | p |");
        let _ = writeln!(md, "|---|---:|---:|---|---:|");
        for o in &s.outcomes {
            if let Some(g) = &o.gsc {
                let ci = match (g.ci_low, g.ci_high) {
                    (Some(l), Some(h)) => format!("[{l:.3}, {h:.3}]"),
                    _ => "n/a".into(),
                };
                let _ = writeln!(md, "| {} | {} | {:.3} | {} | {} |", o.label, g.r, g.average_att, ci, fixed(g.p_value, 3));
            }
        }
    }
    if s.outcomes.iter().any(|o| o.magnitude.is_some()) {
        let _ = writeln!(md, "\n## Magnitude\n");
        let _ = writeln!(md, "| Outcome | Years | Avg. % loss | Annual loss | Cumulative loss |");
        let _ = writeln!(md, "|---|---:|---:|---:|---:|");
        for o in &s.outcomes {
            if let Some(m) = &o.magnitude {
                let _ = writeln!(
                    md,
                    "| {} | {} | {:.2} | {:.4e} | {:.4e} |",
                    o.label,
                    m.horizon,
                    100.0 * m.average_pct_loss,
                    m.annual_loss,
                    m.cumulative_loss
                );
            }
        }
    }
    if !s.failures.is_empty() {
        let _ = writeln!(md, "\n## Failures\n");
        for f in &s.failures {
            let _ = writeln!(md, "- `{}` (exit {}): {}", f.outcome, f.exit_code, f.error);
        }
    }
    md
}
