//! Output files. All floats are written with 9 significant digits so runs
//! diff cleanly.

use std::fs;
use std::path::Path;

use pmd_core::dpo::PreferencePair;
use pmd_core::summary::{summarize, ExampleResult, RunSummary};
use pmd_core::tuning::{DetPoint, TauChoice, TuneResult};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{EngineError, EngineResult};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SCATTER_FILE: &str = "scatter.csv";
pub const DET_FILE: &str = "det.csv";
pub const TUNING_FILE: &str = "tuning.json";
pub const DPO_FILE: &str = "dpo_pairs.jsonl";

pub const SCATTER_HEADER: [&str; 7] = [
    "id",
    "decision_error",
    "example_relevance",
    "example_informativeness",
    "decision",
    "label",
    "stop_reason",
];

pub const SIGNIFICANT_DIGITS: usize = 9;

/// Rounds to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().unwrap_or(x)
}

/// Rounds every float inside a JSON value in place.
pub fn round_floats(value: &mut Value) {
    match value {
        Value::Number(n) if n.is_f64() => {
            if let Some(f) = n.as_f64().map(round_sig).and_then(serde_json::Number::from_f64) {
                *n = f;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

fn rounded<T: Serialize>(value: &T) -> Value {
    let mut v = serde_json::to_value(value).expect("report values serialize");
    round_floats(&mut v);
    v
}

pub fn to_json_line<T: Serialize>(value: &T) -> String {
    let mut s = rounded(value).to_string();
    s.push('\n');
    s
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(&rounded(value)).expect("report values serialize");
    s.push('\n');
    s
}

/// One row per example, sorted by id.
pub fn results_jsonl(results: &[ExampleResult]) -> String {
    let mut sorted: Vec<&ExampleResult> = results.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    sorted.into_iter().map(to_json_line).collect()
}

pub fn parse_results(text: &str) -> EngineResult<Vec<ExampleResult>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EngineError::Validation(format!("results line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn read_results(path: &Path) -> EngineResult<Vec<ExampleResult>> {
    let text = fs::read_to_string(path).map_err(|e| EngineError::io(path, e))?;
    parse_results(&text)
}

fn csv_float(x: Option<f64>) -> String {
    x.map(|v| round_sig(v).to_string()).unwrap_or_default()
}

fn csv_into_string(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is UTF-8")
}

/// Decision error against example relevance and informativeness, one row
/// per evaluated example.
pub fn scatter_csv(results: &[ExampleResult]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SCATTER_HEADER).expect("in-memory write");
    for r in results.iter().filter(|r| r.is_evaluated()) {
        let m = r.metrics.as_ref();
        w.write_record([
            r.id.clone(),
            csv_float(m.map(|m| m.decision_error)),
            csv_float(m.and_then(|m| m.example_relevance)),
            csv_float(m.and_then(|m| m.example_informativeness)),
            r.decision.map(|d| d.as_str().to_string()).unwrap_or_default(),
            r.label.as_str().to_string(),
            r.stop_reason.map(|s| s.as_str().to_string()).unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    csv_into_string(w)
}

pub fn det_csv(points: &[DetPoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["tau", "miss_rate", "false_alarm_rate", "decided_mistakes"])
        .expect("in-memory write");
    for p in points {
        w.write_record([
            csv_float(Some(p.tau)),
            csv_float(p.miss_rate),
            csv_float(p.false_alarm_rate),
            p.decided_mistakes.to_string(),
        ])
        .expect("in-memory write");
    }
    csv_into_string(w)
}

pub fn dpo_jsonl(pairs: &[PreferencePair]) -> String {
    pairs.iter().map(to_json_line).collect()
}

/// Contents of `tuning.json`: whichever searches were run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<TauChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopping: Option<TuneResult>,
}

pub fn write_file(path: &Path, contents: &str) -> EngineResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| EngineError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| EngineError::io(path, e))
}

/// Writes `results.jsonl`, `summary.json` and `scatter.csv`. The summary
/// is computed from the rounded rows, so it can be re-derived from the
/// results file alone.
pub fn write_run_outputs(out_dir: &Path, results: &[ExampleResult]) -> EngineResult<RunSummary> {
    let jsonl = results_jsonl(results);
    let rows = parse_results(&jsonl)?;
    let summary = summarize(&rows);
    write_file(&out_dir.join(RESULTS_FILE), &jsonl)?;
    write_file(&out_dir.join(SUMMARY_FILE), &to_json_pretty(&summary))?;
    write_file(&out_dir.join(SCATTER_FILE), &scatter_csv(&rows))?;
    Ok(summary)
}
