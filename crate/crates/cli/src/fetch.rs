//! Download or convert World Bank indicator data into the long panel format.
//!
//! Sources: a WDI bulk-download CSV (wide, one column per year), a saved
//! World Bank API JSON response, or the API itself over HTTP. HTTP responses
//! are cached under `SYNTHPANEL_CACHE_DIR` (default `.synthpanel-cache`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use synthpanel::panel::{write_long_csv, PanelObservation};

use crate::error::CliError;

pub const CACHE_ENV: &str = "SYNTHPANEL_CACHE_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesMap {
    pub code: String,
    pub outcome: String,
}

impl std::str::FromStr for SeriesMap {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('=') {
            Some((c, o)) if !c.is_empty() && !o.is_empty() => Ok(Self { code: c.into(), outcome: o.into() }),
            _ => Err(format!("expected CODE=outcome, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FetchRequest {
    /// File path (`.csv` or `.json`) or an `http(s)://` API base URL.
    pub source: String,
    pub series: Vec<SeriesMap>,
    /// ISO3 codes; empty keeps every country in a file source.
    pub countries: Vec<String>,
    pub first_period: Option<i32>,
    pub last_period: Option<i32>,
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct Provenance<'a> {
    source: &'a str,
    retrieved_at: String,
    series: BTreeMap<&'a str, &'a str>,
    countries: &'a [String],
    rows: usize,
    cached: Vec<String>,
}

type Row = (String, i32, String, f64);

fn in_window(req: &FetchRequest, year: i32) -> bool {
    req.first_period.is_none_or(|f| year >= f) && req.last_period.is_none_or(|l| year <= l)
}

fn wants_country(req: &FetchRequest, iso: &str) -> bool {
    req.countries.is_empty() || req.countries.iter().any(|c| c == iso)
}

/// Year from headers like `1996` or `1996 [YR1996]`.
fn header_year(h: &str) -> Option<i32> {
    h.split_whitespace().next()?.parse().ok()
}

fn parse_wdi_csv(text: &str, req: &FetchRequest) -> Result<Vec<Row>, CliError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(text.trim_start_matches('\u{feff}').as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CliError::Data(format!("WDI CSV lacks a `{name}` column")))
    };
    let (ci, si) = (col("Country Code")?, col("Series Code")?);
    let years: Vec<(usize, i32)> = headers.iter().enumerate().filter_map(|(i, h)| header_year(h).map(|y| (i, y))).collect();
    let mut rows = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let (Some(iso), Some(code)) = (rec.get(ci), rec.get(si)) else { continue };
        let Some(map) = req.series.iter().find(|m| m.code == code) else { continue };
        seen.insert(code.to_string());
        if !wants_country(req, iso) {
            continue;
        }
        for &(i, y) in &years {
            let Some(cell) = rec.get(i) else { continue };
            if let Ok(v) = cell.trim().parse::<f64>() {
                if v.is_finite() && in_window(req, y) {
                    rows.push((iso.to_string(), y, map.outcome.clone(), v));
                }
            }
        }
    }
    if let Some(m) = req.series.iter().find(|m| !seen.contains(&m.code)) {
        return Err(CliError::UnknownSeriesCode(m.code.clone()));
    }
    Ok(rows)
}

/// Rows from one API page (`[meta, [records…]]`). Missing codes yield an
/// error message object in place of the metadata.
fn parse_api_json(value: &Value, req: &FetchRequest, only: Option<&SeriesMap>) -> Result<(Vec<Row>, usize), CliError> {
    let arr = value.as_array().ok_or_else(|| CliError::Data("API response is not a JSON array".into()))?;
    let meta = arr.first().ok_or_else(|| CliError::Data("empty API response".into()))?;
    if meta.get("message").is_some() {
        let code = only.map(|m| m.code.clone()).unwrap_or_else(|| meta["message"].to_string());
        return Err(CliError::UnknownSeriesCode(code));
    }
    let pages = meta.get("pages").and_then(Value::as_u64).unwrap_or(1) as usize;
    let mut rows = Vec::new();
    for rec in arr.get(1).and_then(Value::as_array).into_iter().flatten() {
        let code = rec["indicator"]["id"].as_str().unwrap_or_default();
        let Some(map) = only.filter(|m| m.code == code).or_else(|| req.series.iter().find(|m| m.code == code)) else {
            continue;
        };
        let iso = rec["countryiso3code"].as_str().unwrap_or_default();
        let year = rec["date"].as_str().and_then(|d| d.parse::<i32>().ok());
        let (Some(year), Some(v)) = (year, rec["value"].as_f64()) else { continue };
        if !iso.is_empty() && wants_country(req, iso) && in_window(req, year) {
            rows.push((iso.to_string(), year, map.outcome.clone(), v));
        }
    }
    Ok((rows, pages))
}

fn cache_dir() -> PathBuf {
    std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".synthpanel-cache"))
}

fn cache_name(url: &str) -> String {
    let body = url.split_once("://").map(|(_, b)| b).unwrap_or(url);
    let mut name: String = body.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect();
    name.push_str(".json");
    name
}

/// GET with a file cache keyed by URL.
fn get_cached(url: &str, cached: &mut Vec<String>) -> Result<String, CliError> {
    let path = cache_dir().join(cache_name(url));
    if let Ok(text) = fs::read_to_string(&path) {
        cached.push(url.to_string());
        return Ok(text);
    }
    let text = ureq::get(url)
        .call()
        .and_then(|mut r| r.body_mut().read_to_string())
        .map_err(|e| CliError::SourceUnreachable(format!("{url}: {e}")))?;
    fs::create_dir_all(cache_dir())?;
    fs::write(&path, &text)?;
    Ok(text)
}

fn api_url(base: &str, req: &FetchRequest, code: &str, page: usize) -> String {
    let countries = if req.countries.is_empty() { "all".to_string() } else { req.countries.join(";") };
    let mut url = format!(
        "{}/country/{}/indicator/{}?format=json&per_page=20000&page={}",
        base.trim_end_matches('/'),
        countries,
        code,
        page
    );
    if let (Some(f), Some(l)) = (req.first_period, req.last_period) {
        url.push_str(&format!("&date={f}:{l}"));
    }
    url
}

fn fetch_http(req: &FetchRequest, cached: &mut Vec<String>) -> Result<Vec<Row>, CliError> {
    let mut rows = Vec::new();
    for m in &req.series {
        let mut page = 1;
        loop {
            let text = get_cached(&api_url(&req.source, req, &m.code, page), cached)?;
            let value: Value =
                serde_json::from_str(&text).map_err(|e| CliError::Data(format!("malformed API response: {e}")))?;
            let (mut r, pages) = parse_api_json(&value, req, Some(m))?;
            rows.append(&mut r);
            if page >= pages {
                break;
            }
            page += 1;
        }
    }
    Ok(rows)
}

fn read_source(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

/// Fetch, convert to long format, write `out` plus `<out>.provenance.json`.
pub fn fetch(req: &FetchRequest) -> Result<usize, CliError> {
    if req.series.is_empty() {
        return Err(CliError::Config("fetch: at least one --series CODE=outcome is required".into()));
    }
    let mut cached = Vec::new();
    let mut rows = if req.source.starts_with("http://") || req.source.starts_with("https://") {
        fetch_http(req, &mut cached)?
    } else {
        let path = Path::new(&req.source);
        let text = read_source(path)?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            let value: Value = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("malformed JSON: {e}")))?;
            let (rows, _) = parse_api_json(&value, req, None)?;
            for m in &req.series {
                if !rows.iter().any(|r| r.2 == m.outcome) {
                    return Err(CliError::UnknownSeriesCode(m.code.clone()));
                }
            }
            rows
        } else {
            parse_wdi_csv(&text, req)?
        }
    };
    rows.sort_by(|a, b| (&a.0, &a.2, a.1).cmp(&(&b.0, &b.2, b.1)));
    rows.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1 && a.2 == b.2);
    let obs: Vec<PanelObservation> = rows
        .into_iter()
        .map(|(unit, period, outcome, value)| PanelObservation { unit, period, outcome, value })
        .collect();
    if let Some(dir) = req.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_long_csv(fs::File::create(&req.out)?, &obs)?;
    let prov = Provenance {
        source: &req.source,
        retrieved_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        series: req.series.iter().map(|m| (m.code.as_str(), m.outcome.as_str())).collect(),
        countries: &req.countries,
        rows: obs.len(),
        cached,
    };
    let mut side = req.out.clone().into_os_string();
    side.push(".provenance.json");
    fs::write(side, serde_json::to_string_pretty(&prov)? + "\n")?;
    Ok(obs.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(series: &[(&str, &str)]) -> FetchRequest {
        FetchRequest {
            source: String::new(),
            series: series.iter().map(|(c, o)| SeriesMap { code: c.to_string(), outcome: o.to_string() }).collect(),
            countries: vec!["IRN".into(), "TUR".into()],
            first_period: Some(2000),
            last_period: Some(2001),
            out: PathBuf::new(),
        }
    }

    const WDI: &str = "Country Name,Country Code,Series Name,Series Code,1999 [YR1999],2000 [YR2000],2001 [YR2001]\n\
        Iran,IRN,GDP,NY.GDP.MKTP.KD,1,2,..\n\
        Turkey,TUR,GDP,NY.GDP.MKTP.KD,3,4,5\n\
        Egypt,EGY,GDP,NY.GDP.MKTP.KD,6,7,8\n";

    #[test]
    fn wdi_csv_filters_and_skips_missing() {
        let rows = parse_wdi_csv(WDI, &req(&[("NY.GDP.MKTP.KD", "gdp")])).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.contains(&("TUR".into(), 2001, "gdp".into(), 5.0)));
    }

    #[test]
    fn unknown_code_is_reported() {
        let err = parse_wdi_csv(WDI, &req(&[("XX.BOGUS", "x")])).unwrap_err();
        assert!(matches!(err, CliError::UnknownSeriesCode(c) if c == "XX.BOGUS"));
    }

    #[test]
    fn api_json_rows_and_error_message() {
        let ok: Value = serde_json::json!([
            {"page": 1, "pages": 1},
            [
                {"indicator": {"id": "NY.GDP.MKTP.KD"}, "countryiso3code": "IRN", "date": "2000", "value": 1.5},
                {"indicator": {"id": "NY.GDP.MKTP.KD"}, "countryiso3code": "IRN", "date": "2001", "value": null}
            ]
        ]);
        let r = req(&[("NY.GDP.MKTP.KD", "gdp")]);
        let (rows, pages) = parse_api_json(&ok, &r, None).unwrap();
        assert_eq!((rows.len(), pages), (1, 1));
        let bad = serde_json::json!([{"message": [{"id": "120", "key": "Invalid value"}]}]);
        assert!(matches!(parse_api_json(&bad, &r, Some(&r.series[0])), Err(CliError::UnknownSeriesCode(_))));
    }

    #[test]
    fn series_map_parse() {
        let m: SeriesMap = "NY.GDP.MKTP.KD=gdp".parse().unwrap();
        assert_eq!(m.outcome, "gdp");
        assert!("nogood".parse::<SeriesMap>().is_err());
    }
}
