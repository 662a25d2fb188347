use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::error::{LabError, Result};
use crate::harness::ExperimentReport;

/// Shortest string that parses back to exactly `x`.
///
/// Plain decimal for moderate magnitudes, scientific otherwise so that tiny
/// errors do not print hundreds of zeros.
pub fn format_float(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-5..1e16).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// CSV text: header row of column names, one line per row, `\n` endings.
pub fn report_csv(report: &ExperimentReport) -> Result<String> {
    let csv_err = |e: csv::Error| LabError::InvalidArgument(format!("csv for {}: {e}", report.name));
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(&report.columns).map_err(csv_err)?;
    for row in &report.rows {
        w.write_record(row.iter().map(|v| format_float(*v))).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| LabError::InvalidArgument(format!("csv for {}: {}", report.name, e.error())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Pretty JSON with lexicographically sorted keys and a trailing newline.
pub fn report_json(report: &ExperimentReport) -> String {
    let doc: Value = json!({
        "name": report.name,
        "columns": report.columns,
        "config": report.config_echo,
        "summary": report.summary,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("json values serialize");
    text.push('\n');
    text
}

/// Writes `<name>.csv` and `<name>.json` into `dir`, creating it if needed.
pub fn write_report(report: &ExperimentReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let csv_path = dir.join(format!("{}.csv", report.name));
    let json_path = dir.join(format!("{}.json", report.name));
    fs::write(&csv_path, report_csv(report)?).map_err(|e| LabError::io(&csv_path, e))?;
    fs::write(&json_path, report_json(report)).map_err(|e| LabError::io(&json_path, e))?;
    Ok(vec![csv_path, json_path])
}
