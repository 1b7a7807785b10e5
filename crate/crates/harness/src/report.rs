//! Run reports: JSON summaries next to the CSV rows, plus aggregation of a
//! directory of reports.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::error::{HarnessError, Result};
use crate::runner::RunArtifacts;
use crate::scenario::Scenario;

pub fn report_json(scenario: &Scenario, artifacts: &RunArtifacts, seed: u64) -> Value {
    json!({
        "scenario": scenario.name,
        "scheme": scenario.scheme.as_str(),
        "seed": seed,
        "horizon": artifacts.rows.len(),
        "alpha": scenario.alpha,
        "lambda": scenario.lambda,
        "rate": {
            "n_steps": artifacts.rate.n_steps,
            "n_alarms": artifacts.rate.n_alarms,
            "rate": artifacts.rate.rate,
            "ci_low": artifacts.rate.ci_low,
            "ci_high": artifacts.rate.ci_high,
            "detection_delay": artifacts.rate.detection_delay,
        },
        "windowed": {
            "count": artifacts.windowed_count,
            "first": artifacts.windowed_first,
        },
    })
}

/// Writes `<dir>/<name>.csv` and `<dir>/<name>.report.json`; returns the two
/// paths.
pub fn write_outputs(
    dir: &Path,
    scenario: &Scenario,
    artifacts: &RunArtifacts,
    seed: u64,
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{}.csv", scenario.name));
    let report_path = dir.join(format!("{}.report.json", scenario.name));
    std::fs::write(&csv_path, artifacts.csv.as_bytes())?;
    let report = report_json(scenario, artifacts, seed);
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?.as_bytes())?;
    Ok((csv_path, report_path))
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::Validation(format!("json: {e}"))
    }
}

/// Collects every `*.report.json` under `dir` (two levels deep) into one
/// aggregate document.
pub fn aggregate(dir: &Path) -> Result<Value> {
    let mut reports = Vec::new();
    collect_reports(dir, 0, &mut reports)?;
    reports.sort_by(|a, b| {
        let key = |v: &Value| {
            (
                v["scenario"].as_str().unwrap_or("").to_string(),
                v["seed"].as_u64().unwrap_or(0),
            )
        };
        key(a).cmp(&key(b))
    });
    let n = reports.len();
    let alarms: u64 = reports
        .iter()
        .filter_map(|r| r["rate"]["n_alarms"].as_u64())
        .sum();
    let steps: u64 = reports
        .iter()
        .filter_map(|r| r["rate"]["n_steps"].as_u64())
        .sum();
    Ok(json!({
        "reports": reports,
        "summary": {
            "count": n,
            "total_false_alarm_steps": steps,
            "total_false_alarms": alarms,
            "pooled_rate": if steps > 0 { alarms as f64 / steps as f64 } else { 0.0 },
        },
    }))
}

fn collect_reports(dir: &Path, depth: usize, out: &mut Vec<Value>) -> Result<()> {
    if depth > 2 {
        return Ok(());
    }
    let entries = std::fs::read_dir(dir)
        .map_err(|e| HarnessError::Validation(format!("cannot read {}: {e}", dir.display())))?;
    for entry in entries {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            collect_reports(&path, depth + 1, out)?;
        } else if path
            .file_name()
            .and_then(|s| s.to_str())
            .is_some_and(|s| s.ends_with(".report.json"))
        {
            let text = std::fs::read_to_string(&path)?;
            out.push(serde_json::from_str(&text)?);
        }
    }
    Ok(())
}
