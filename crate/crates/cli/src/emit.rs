//! Result serialization: CSV and JSON renderings of rate reports, sweep
//! tables, and coverage (CDF) tables. All numbers use a fixed 9-significant-
//! digit scientific format, independent of locale, and row order is fully
//! deterministic.

use std::collections::BTreeMap;

use fdmimo::harness::{RateReport, Scheme, SweepAxis, SweepRow};
use fdmimo::rate::percentile;
use serde_json::{json, Map, Number, Value};

/// Nine significant digits, scientific notation, locale-independent.
pub fn fmt_sig9(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x }; // normalize -0.0
    format!("{x:.8e}")
}

fn json_num(x: f64) -> Value {
    // round through the formatter so JSON carries the same 9 significant
    // digits as the CSV output
    let rounded: f64 = fmt_sig9(x).parse().expect("formatter emits valid floats");
    Number::from_f64(rounded).map(Value::Number).expect("finite")
}

/// Per-(user, scheme) rows in (trial, user, scheme-name) order.
fn sorted_rows(report: &RateReport) -> Vec<(usize, usize, usize, f64, f64, f64, Scheme, f64)> {
    let mut rows = Vec::new();
    for r in &report.records {
        for (&scheme, &rate) in &r.rates {
            rows.push((r.trial, r.cell, r.user, r.d_m, r.phi_rad, r.theta_rad, scheme, rate));
        }
    }
    rows.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.2.cmp(&b.2))
            .then(a.6.name().cmp(b.6.name()))
    });
    rows
}

/// CSV rendering: `trial,cell,user,d_m,phi_rad,theta_rad,scheme,rate_bps_hz`.
pub fn report_csv(report: &RateReport) -> String {
    let mut out = String::from("trial,cell,user,d_m,phi_rad,theta_rad,scheme,rate_bps_hz\n");
    for (trial, cell, user, d, phi, theta, scheme, rate) in sorted_rows(report) {
        out.push_str(&format!(
            "{trial},{cell},{user},{},{},{},{},{}\n",
            fmt_sig9(d),
            fmt_sig9(phi),
            fmt_sig9(theta),
            scheme.name(),
            fmt_sig9(rate)
        ));
    }
    out
}

/// JSON rendering: the same records plus per-scheme aggregates.
pub fn report_json(report: &RateReport) -> String {
    let records: Vec<Value> = sorted_rows(report)
        .into_iter()
        .map(|(trial, cell, user, d, phi, theta, scheme, rate)| {
            json!({
                "trial": trial,
                "cell": cell,
                "user": user,
                "d_m": json_num(d),
                "phi_rad": json_num(phi),
                "theta_rad": json_num(theta),
                "scheme": scheme.name(),
                "rate_bps_hz": json_num(rate),
            })
        })
        .collect();
    let mut aggregates = Map::new();
    for (scheme, agg) in &report.aggregates {
        aggregates.insert(
            scheme.name().to_string(),
            json!({
                "mean": json_num(agg.mean),
                "p05": json_num(agg.p05),
                "p50": json_num(agg.p50),
                "p95": json_num(agg.p95),
                "mean_leakage": json_num(agg.mean_leakage),
            }),
        );
    }
    let doc = json!({
        "records": records,
        "aggregates": Value::Object(aggregates),
        "feasibility_drops": report.feasibility_drops,
        "separation_violations": report.separation_violations,
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("serializable");
    s.push('\n');
    s
}

/// Coverage table: per-scheme CDF series plus a percentile summary block in
/// trailing comment lines.
pub fn coverage_csv(report: &RateReport, grid: usize) -> Result<String, String> {
    let mut out = String::from("scheme,rate_bps_hz,cdf\n");
    let mut summary: BTreeMap<&'static str, (f64, f64, f64)> = BTreeMap::new();
    for &scheme in &report.schemes {
        let rates = report.rates_of(scheme);
        if rates.is_empty() {
            continue;
        }
        let cdf = report.cdf_of(scheme, grid).map_err(|e| e.to_string())?;
        for (x, p) in &cdf.points {
            out.push_str(&format!("{},{},{}\n", scheme.name(), fmt_sig9(*x), fmt_sig9(*p)));
        }
        summary.insert(
            scheme.name(),
            (
                percentile(&rates, 0.05).map_err(|e| e.to_string())?,
                percentile(&rates, 0.50).map_err(|e| e.to_string())?,
                percentile(&rates, 0.95).map_err(|e| e.to_string())?,
            ),
        );
    }
    out.push_str("# percentiles\n# scheme,p05,p50,p95\n");
    for (name, (p05, p50, p95)) in summary {
        out.push_str(&format!(
            "# {name},{},{},{}\n",
            fmt_sig9(p05),
            fmt_sig9(p50),
            fmt_sig9(p95)
        ));
    }
    Ok(out)
}

pub fn coverage_json(report: &RateReport, grid: usize) -> Result<String, String> {
    let mut series = Map::new();
    let mut summary = Map::new();
    for &scheme in &report.schemes {
        let rates = report.rates_of(scheme);
        if rates.is_empty() {
            continue;
        }
        let cdf = report.cdf_of(scheme, grid).map_err(|e| e.to_string())?;
        let pts: Vec<Value> = cdf
            .points
            .iter()
            .map(|(x, p)| json!({"rate_bps_hz": json_num(*x), "cdf": json_num(*p)}))
            .collect();
        series.insert(scheme.name().to_string(), Value::Array(pts));
        summary.insert(
            scheme.name().to_string(),
            json!({
                "p05": json_num(percentile(&rates, 0.05).map_err(|e| e.to_string())?),
                "p50": json_num(percentile(&rates, 0.50).map_err(|e| e.to_string())?),
                "p95": json_num(percentile(&rates, 0.95).map_err(|e| e.to_string())?),
            }),
        );
    }
    let doc = json!({"series": Value::Object(series), "percentiles": Value::Object(summary)});
    let mut s = serde_json::to_string_pretty(&doc).expect("serializable");
    s.push('\n');
    Ok(s)
}

/// Sweep table: one row per (axis value, scheme).
pub fn sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "axis,value,scheme,mean_rate_bps_hz,p05_rate_bps_hz,p50_rate_bps_hz,p95_rate_bps_hz,mean_leakage\n",
    );
    for row in rows {
        for (scheme, agg) in &row.aggregates {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                axis.name(),
                fmt_sig9(row.value),
                scheme.name(),
                fmt_sig9(agg.mean),
                fmt_sig9(agg.p05),
                fmt_sig9(agg.p50),
                fmt_sig9(agg.p95),
                fmt_sig9(agg.mean_leakage)
            ));
        }
    }
    out
}

pub fn sweep_json(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let arr: Vec<Value> = rows
        .iter()
        .map(|row| {
            let mut per_scheme = Map::new();
            for (scheme, agg) in &row.aggregates {
                per_scheme.insert(
                    scheme.name().to_string(),
                    json!({
                        "mean": json_num(agg.mean),
                        "p05": json_num(agg.p05),
                        "p50": json_num(agg.p50),
                        "p95": json_num(agg.p95),
                        "mean_leakage": json_num(agg.mean_leakage),
                    }),
                );
            }
            json!({"axis": axis.name(), "value": json_num(row.value), "schemes": Value::Object(per_scheme)})
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&json!({ "rows": arr })).expect("serializable");
    s.push('\n');
    s
}
