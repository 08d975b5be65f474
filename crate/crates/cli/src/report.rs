//! The per-estimator analysis report: one row per covariance estimator, all
//! sharing the fitted log hazard ratio, with the interval and p-value
//! varying by row.

use marcox::inference::{wald_test, TestResult};
use marcox::variance::{sandwich, EstimatorKind};
use marcox::{FitResult, TrialData};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub t_stat: f64,
    pub df: usize,
    pub p_value: f64,
}

impl ReportRow {
    fn from_test(label: &str, t: &TestResult) -> Self {
        ReportRow {
            label: label.to_string(),
            estimate: t.estimate,
            se: t.se,
            ci_low: t.ci_low,
            ci_high: t.ci_high,
            t_stat: t.t_stat,
            df: t.df,
            p_value: t.p_value,
        }
    }
}

/// Evaluate every requested estimator; estimators whose correction is
/// undefined on this dataset come back in the failure list instead.
pub fn build_report(
    data: &TrialData,
    fit: &FitResult,
    kinds: &[EstimatorKind],
    level: f64,
) -> (Vec<ReportRow>, Vec<(String, String)>) {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for kind in kinds {
        let label = kind.label.to_string();
        let result = sandwich(data, fit, kind)
            .map_err(|e| e.to_string())
            .and_then(|v| {
                wald_test(fit, &v, 0, level, data.n_clusters()).map_err(|e| e.to_string())
            });
        match result {
            Ok(test) => rows.push(ReportRow::from_test(&label, &test)),
            Err(reason) => failures.push((label, reason)),
        }
    }
    (rows, failures)
}

/// Human-readable table on the log and hazard-ratio scales.
pub fn render_table(rows: &[ReportRow], level: f64) -> String {
    let pct = format!("{:.0}% CI", level * 100.0);
    let mut out = format!(
        "{:<10} {:>8}  {:<18} {:>8}  {:<18} {:>8}\n",
        "Estimator",
        "Log HR",
        format!("{pct} (log)"),
        "HR",
        format!("{pct} (HR)"),
        "p-value"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<10} {:>8.3}  ({:>6.3}, {:>6.3})   {:>8.3}  ({:>6.3}, {:>6.3})   {:>8.3}\n",
            r.label,
            r.estimate,
            r.ci_low,
            r.ci_high,
            r.estimate.exp(),
            r.ci_low.exp(),
            r.ci_high.exp(),
            r.p_value
        ));
    }
    out
}

pub const REPORT_CSV_HEADER: &str =
    "estimator,log_hr,se,ci_low,ci_high,hr,hr_ci_low,hr_ci_high,t_stat,df,p_value";

/// Machine-readable report: full-precision floats, stable under
/// parse-and-reprint.
pub fn report_to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.label,
            r.estimate,
            r.se,
            r.ci_low,
            r.ci_high,
            r.estimate.exp(),
            r.ci_low.exp(),
            r.ci_high.exp(),
            r.t_stat,
            r.df,
            r.p_value
        ));
    }
    out
}

/// Parse a report CSV produced by [`report_to_csv`].
pub fn report_from_csv(text: &str) -> Result<Vec<ReportRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == REPORT_CSV_HEADER => {}
        other => return Err(format!("bad report header: {other:?}")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(format!("row {}: expected 11 fields", i + 2));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| format!("row {}: {e}", i + 2));
        rows.push(ReportRow {
            label: f[0].to_string(),
            estimate: num(f[1])?,
            se: num(f[2])?,
            ci_low: num(f[3])?,
            ci_high: num(f[4])?,
            t_stat: num(f[8])?,
            df: f[9].parse().map_err(|e| format!("row {}: {e}", i + 2))?,
            p_value: num(f[10])?,
        });
    }
    Ok(rows)
}
