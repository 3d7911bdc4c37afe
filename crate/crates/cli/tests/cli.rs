use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const DONORS: [&str; 12] = ["BGR", "EGY", "IDN", "JOR", "MYS", "MAR", "ROU", "SRB", "ZAF", "TUN", "TUR", "VNM"];

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_synthpanel"))
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn simulate(dir: &Path) -> PathBuf {
    let data = dir.join("sim.csv");
    let out = run(bin().arg("simulate").arg("--config").arg(configs().join("simulate.toml")).arg("--out").arg(&data));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    data
}

fn write_config(dir: &Path, data: &Path, outcomes: &[&str], extra: &str) -> PathBuf {
    let mut text = format!(
        "seed = 3\ntreated_unit = \"IRN\"\nt0 = 2006\ndonors = {:?}\n{extra}\n[data]\npath = {:?}\n[v_search]\nrestarts = 2\nmax_evals = 200\n",
        DONORS,
        data.display().to_string()
    );
    for o in outcomes {
        text.push_str(&format!("[[outcomes]]\nid = \"{o}\"\n"));
    }
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn file_names(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> =
        std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    v.sort();
    v
}

#[test]
fn fit_only_writes_exactly_the_fit_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate(tmp.path());
    let extra = "[placebo]\nenabled = false\n[gsc]\nenabled = false";
    let cfg = write_config(tmp.path(), &data, &["gdp"], extra);
    let out = tmp.path().join("out");
    let o = run(bin().arg("report").arg("--config").arg(&cfg).arg("--out").arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(file_names(&out.join("gdp")), ["effect.json", "scm_fit.json", "scm_paths.csv", "weights.csv"]);
    let fit: Value = serde_json::from_str(&std::fs::read_to_string(out.join("gdp/scm_fit.json")).unwrap()).unwrap();
    let w: f64 = fit["weights"]["weights"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((w - 1.0).abs() < 1e-9);
}

#[test]
fn missing_outcome_is_a_config_error_naming_it() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate(tmp.path());
    let cfg = write_config(tmp.path(), &data, &["gdp", "no_such_series"], "");
    let o = run(bin().arg("fit").arg("--config").arg(&cfg).arg("--out").arg(tmp.path().join("out")));
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("no_such_series") && err.contains("outcomes[1]"), "{err}");
}

#[test]
fn missing_data_file_exits_with_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tmp.path().join("absent.csv"), &["gdp"], "");
    let o = run(bin().arg("fit").arg("--config").arg(&cfg));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn full_simulated_run_has_nine_outcomes_and_consistent_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate(tmp.path());
    let text = std::fs::read_to_string(configs().join("simulated.toml"))
        .unwrap()
        .replace("../data/simulated.csv", &data.display().to_string());
    let cfg = tmp.path().join("simulated.toml");
    std::fs::write(&cfg, text).unwrap();
    let out = tmp.path().join("out");
    let o = run(bin().arg("report").arg("--config").arg(&cfg).arg("--out").arg(&out).arg("--jobs").arg("2"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let dirs: Vec<_> = std::fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).collect();
    assert_eq!(dirs.len(), 9);
    for name in ["summary_fit.csv", "summary_effects.csv", "summary_persistence.csv", "summary_gsc.csv"] {
        let rows = csv::Reader::from_path(out.join(name)).unwrap().records().count();
        assert_eq!(rows, 9, "{name}");
    }

    // summary p-values are the placebo module's values, unrounded
    let mut rdr = csv::Reader::from_path(out.join("summary_persistence.csv")).unwrap();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let summary: Value =
            serde_json::from_str(&std::fs::read_to_string(out.join(&rec[0]).join("placebo_summary.json")).unwrap())
                .unwrap();
        assert_eq!(rec[3].parse::<f64>().unwrap(), summary["left_p_t0_plus_1"]["p"].as_f64().unwrap());
        assert_eq!(rec[4].parse::<f64>().unwrap(), summary["left_p_end"]["p"].as_f64().unwrap());
        assert_eq!(rec[5].parse::<f64>().unwrap(), summary["two_sided_p_average"]["p"].as_f64().unwrap());
    }
    let gdp = file_names(&out.join("gdp"));
    for f in ["gsc_paths.csv", "gsc_in_time.json", "in_time_2001.json", "magnitude.json", "placebo_gaps.csv"] {
        assert!(gdp.iter().any(|g| g == f), "{f} missing from {gdp:?}");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate(tmp.path());
    let extra = "[placebo]\nenabled = false";
    let cfg = write_config(tmp.path(), &data, &["gdp"], extra);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(run(bin().args(["fit", "--seed", "11", "--config"]).arg(&cfg).arg("--out").arg(&a)).status.success());
    assert!(run(bin().args(["fit", "--config"]).arg(&cfg).arg("--out").arg(&b)).status.success());
    let ra: Value = serde_json::from_str(&std::fs::read_to_string(a.join("run.json")).unwrap()).unwrap();
    let rb: Value = serde_json::from_str(&std::fs::read_to_string(b.join("run.json")).unwrap()).unwrap();
    assert_eq!((ra["seed"].as_u64(), rb["seed"].as_u64()), (Some(11), Some(3)));
}

#[test]
fn ingest_writes_filtered_panel() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate(tmp.path());
    let cfg = write_config(tmp.path(), &data, &["gdp", "fdi"], "");
    let out = tmp.path().join("ingest");
    assert!(run(bin().arg("ingest").arg("--config").arg(&cfg).arg("--out").arg(&out)).status.success());
    let rows = csv::Reader::from_path(out.join("panel.csv")).unwrap().records().count();
    assert_eq!(rows, 13 * 29 * 2);
}

#[test]
fn simulate_writes_truth_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("convex.csv");
    let o = run(bin().args(["simulate", "--mode", "convex", "--effect", "-0.3", "--seed", "5", "--out"]).arg(&data));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let truth: Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("convex.csv.truth.json")).unwrap()).unwrap();
    assert!(truth[0]["att"].as_array().unwrap().iter().all(|v| v.as_f64() == Some(-0.3)));
    assert_eq!(truth[0]["weights"].as_array().unwrap().len(), 12);
}

// ---------------------------------------------------------------------------
// fetch

const WDI: &str = "Country Name,Country Code,Series Name,Series Code,2000 [YR2000],2001 [YR2001]\n\
    Iran,IRN,GDP,NY.GDP.MKTP.KD,10,11\n\
    Iran,IRN,Trade,NE.TRD.GNFS.ZS,40,41\n\
    Turkey,TUR,GDP,NY.GDP.MKTP.KD,20,21\n\
    Turkey,TUR,Trade,NE.TRD.GNFS.ZS,50,..\n";

#[test]
fn fetch_local_file_merges_series() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("wdi.csv");
    std::fs::write(&src, WDI).unwrap();
    let out = tmp.path().join("panel.csv");
    let o = run(bin()
        .args(["fetch", "--source"])
        .arg(&src)
        .args(["--series", "NY.GDP.MKTP.KD=gdp", "--series", "NE.TRD.GNFS.ZS=trade", "--out"])
        .arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("IRN,2000,gdp,10") && text.contains("TUR,2000,trade,50"));
    assert_eq!(text.lines().count(), 1 + 7);
    let prov: Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("panel.csv.provenance.json")).unwrap()).unwrap();
    assert!(prov["retrieved_at"].as_str().is_some());
    assert_eq!(prov["series"]["NE.TRD.GNFS.ZS"], "trade");
}

#[test]
fn fetch_unknown_code_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("wdi.csv");
    std::fs::write(&src, WDI).unwrap();
    let o = run(bin().args(["fetch", "--source"]).arg(&src).args(["--series", "XX.NOPE=x", "--out"]).arg(tmp.path().join("p.csv")));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("XX.NOPE"));
}

#[test]
fn fetch_unreachable_source() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(bin()
        .env("SYNTHPANEL_CACHE_DIR", tmp.path().join("cache"))
        .args(["fetch", "--source", "http://127.0.0.1:9", "--series", "NY.GDP.MKTP.KD=gdp", "--out"])
        .arg(tmp.path().join("p.csv")));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unreachable"));
}

/// API response for 13 countries × 1 series, replayed from the cache.
#[test]
fn fetch_replays_cached_http_response() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    std::fs::create_dir_all(&cache).unwrap();
    let countries: Vec<&str> = std::iter::once("IRN").chain(DONORS).collect();
    let records: Vec<Value> = countries
        .iter()
        .enumerate()
        .flat_map(|(i, c)| {
            (1996..=2024).map(move |y| {
                serde_json::json!({
                    "indicator": {"id": "NY.GDP.MKTP.KD", "value": "GDP (constant 2015 US$)"},
                    "countryiso3code": c,
                    "date": y.to_string(),
                    "value": 1e10 * (1.0 + i as f64) * (1.0 + 0.03 * (y - 1996) as f64 + 0.001 * ((y * (i as i32 + 3)) % 7) as f64),
                })
            })
        })
        .collect();
    let body = serde_json::json!([{"page": 1, "pages": 1, "per_page": 20000, "total": records.len()}, records]);
    let base = "http://api.example.invalid/v2";
    let url = format!(
        "{base}/country/{}/indicator/NY.GDP.MKTP.KD?format=json&per_page=20000&page=1&date=1996:2024",
        countries.join(";")
    );
    let name: String = url
        .split_once("://")
        .unwrap()
        .1
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    std::fs::write(cache.join(format!("{name}.json")), body.to_string()).unwrap();

    let out = tmp.path().join("panel.csv");
    let o = run(bin()
        .env("SYNTHPANEL_CACHE_DIR", &cache)
        .args(["fetch", "--source", base, "--series", "NY.GDP.MKTP.KD=gdp", "--first-period", "1996", "--last-period", "2024"])
        .arg("--countries")
        .arg(countries.join(","))
        .arg("--out")
        .arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let cfg = write_config(tmp.path(), &out, &["gdp"], "[placebo]\nenabled = false");
    let std::result::Result::Ok(text) = std::fs::read_to_string(&cfg) else { panic!() };
    std::fs::write(&cfg, text.replace("id = \"gdp\"", "id = \"gdp\"\ntransform = { kind = \"log\" }")).unwrap();
    let ingest = tmp.path().join("ingest");
    let o = run(bin().arg("ingest").arg("--config").arg(&cfg).arg("--out").arg(&ingest));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(ingest.join("panel_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["donors"].as_array().unwrap().len(), 12);
    assert_eq!(summary["periods"].as_array().unwrap().len(), 29);
}
