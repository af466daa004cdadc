//! Dataset ingestion, benchmark-style scoring and report emission.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{euclidean, ImageMeta, Point2D};
use crate::par::{Executor, Parallelism};
use crate::parser::{parse_with, ParseOptions, ParsedResponse, TaskKind};
use crate::reward::{compose, r_acc, r_mask, PresetTable, RelationChecker, EnvChecker, Verification, VerificationSpec};
use crate::trace::{resample_points, Trajectory2D};

/// One question-verification pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub id: String,
    pub task: TaskKind,
    pub dims: ImageMeta,
    pub question: String,
    pub verification: Verification,
    pub image: Option<PathBuf>,
}

/// On-disk form of a record (one JSON object per line).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecordJson {
    pub id: String,
    pub task: TaskKind,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub question: String,
    pub verification: VerificationSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
}

impl EvalRecordJson {
    /// Validate and resolve file references relative to `base_dir`.
    pub fn into_record(self, base_dir: Option<&Path>) -> Result<EvalRecord> {
        if self.id.is_empty() {
            return Err(Error::SchemaViolation("empty id".into()));
        }
        let dims = ImageMeta::new(self.width, self.height)
            .map_err(|e| Error::SchemaViolation(e.to_string()))?;
        let verification = self
            .verification
            .load(base_dir)
            .map_err(|e| match e {
                Error::Io { .. } | Error::Image { .. } => e,
                other => Error::SchemaViolation(other.to_string()),
            })?;
        if !verification.matches(self.task) {
            return Err(Error::SchemaViolation(format!(
                "task {} cannot be verified by a `{}` payload",
                self.task,
                verification.kind()
            )));
        }
        match &verification {
            Verification::Mask { mask, .. } if mask.dims() != dims => {
                return Err(Error::SchemaViolation(format!(
                    "mask is {}x{} but the record is {}x{}",
                    mask.dims().width,
                    mask.dims().height,
                    dims.width,
                    dims.height
                )));
            }
            Verification::Trace(t) => {
                if t.dims() != dims {
                    return Err(Error::SchemaViolation("trace dimensions differ from the record".into()));
                }
                if t.len() < 2 || t.path_length() <= 0.0 {
                    return Err(Error::SchemaViolation("ground-truth trace is degenerate".into()));
                }
            }
            _ => {}
        }
        Ok(EvalRecord {
            id: self.id,
            task: self.task,
            dims,
            question: self.question,
            verification,
            image: self.image.map(|p| match base_dir {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectKind {
    SchemaViolation,
    DuplicateId,
}

/// A dataset line that could not be loaded. Lines are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub line: usize,
    pub kind: RejectKind,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub records: Vec<EvalRecord>,
    pub rejects: Vec<Reject>,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path.parent())
}

/// Parse JSON-lines dataset text. Blank lines are skipped.
pub fn parse_dataset(text: &str, base_dir: Option<&Path>) -> Result<Dataset> {
    let mut out = Dataset::default();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let reject = |msg: String| Reject {
            line: lineno,
            kind: RejectKind::SchemaViolation,
            message: msg,
        };
        let raw: EvalRecordJson = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                out.rejects.push(reject(e.to_string()));
                continue;
            }
        };
        if seen.contains(&raw.id) {
            out.rejects.push(Reject {
                line: lineno,
                kind: RejectKind::DuplicateId,
                message: format!("id `{}` already used", raw.id),
            });
            continue;
        }
        match raw.into_record(base_dir) {
            Ok(rec) => {
                seen.insert(rec.id.clone());
                out.records.push(rec);
            }
            Err(e) => out.rejects.push(reject(e.to_string())),
        }
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct ResponseLine {
    id: String,
    response: String,
}

/// Responses file: one `{"id": ..., "response": ...}` object per line.
/// A repeated id is a schema violation.
pub fn load_responses(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_responses(&text)
}

pub fn parse_responses(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: ResponseLine = serde_json::from_str(line)
            .map_err(|e| Error::SchemaViolation(format!("responses line {}: {e}", i + 1)))?;
        if out.insert(r.id.clone(), r.response).is_some() {
            return Err(Error::SchemaViolation(format!(
                "responses line {}: duplicate id `{}`",
                i + 1,
                r.id
            )));
        }
    }
    Ok(out)
}

pub const METRIC_ACCURACY: &str = "accuracy";
pub const METRIC_ACCURACY_ANY: &str = "accuracy_any";
pub const METRIC_RMSE: &str = "rmse";
pub const METRIC_MAE: &str = "mae";
pub const METRIC_SUCCESS: &str = "success_rate";

/// Report order of the metrics each task carries.
pub fn task_metrics(task: TaskKind) -> &'static [&'static str] {
    match task {
        TaskKind::GeneralQA | TaskKind::SpatialQA => &[METRIC_ACCURACY],
        TaskKind::REG | TaskKind::RRG | TaskKind::OFG => &[METRIC_ACCURACY, METRIC_ACCURACY_ANY],
        TaskKind::VTG => &[METRIC_RMSE, METRIC_MAE],
        TaskKind::RRG3D => &[METRIC_SUCCESS],
    }
}

fn is_fraction(metric: &str) -> bool {
    metric != METRIC_RMSE && metric != METRIC_MAE
}

/// Per-record outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordScore {
    pub id: String,
    pub task: TaskKind,
    pub missing: bool,
    pub format_ok: bool,
    /// Task metrics for this record; a metric is absent when it cannot be
    /// computed (e.g. a VTG answer with no parsable points).
    pub metrics: BTreeMap<String, f64>,
    /// Composed training reward under the task preset, when one is available.
    pub reward: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: TaskKind,
    pub metric: String,
    pub value: f64,
    pub n: usize,
    pub format_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreReport {
    pub rows: Vec<ReportRow>,
    /// Sorted by id.
    pub records: Vec<RecordScore>,
}

impl ScoreReport {
    pub fn row(&self, task: TaskKind, metric: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.task == task && r.metric == metric)
    }

    /// Aggregate rows recomputed from per-record values.
    pub fn aggregate(records: &[RecordScore]) -> Vec<ReportRow> {
        let mut rows = Vec::new();
        for task in TaskKind::ALL {
            let of_task: Vec<&RecordScore> = records.iter().filter(|r| r.task == task).collect();
            if of_task.is_empty() {
                continue;
            }
            let failures = of_task.iter().filter(|r| !r.format_ok).count();
            for &metric in task_metrics(task) {
                let values: Vec<f64> = of_task.iter().filter_map(|r| r.metrics.get(metric).copied()).collect();
                let value = if values.is_empty() {
                    f64::NAN
                } else {
                    values.iter().sum::<f64>() / values.len() as f64
                };
                rows.push(ReportRow {
                    task,
                    metric: metric.to_string(),
                    value,
                    n: values.len(),
                    format_failures: failures,
                });
            }
        }
        rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScoreOptions {
    pub parse: ParseOptions,
    pub parallelism: Parallelism,
}

/// Score every record against its response. Anomalies are recorded per
/// record; nothing is fatal except a thread-pool failure.
pub fn score(
    records: &[EvalRecord],
    responses: &BTreeMap<String, String>,
    presets: &PresetTable,
    opts: &ScoreOptions,
) -> Result<ScoreReport> {
    let mut order: Vec<&EvalRecord> = records.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let exec = Executor::new(opts.parallelism)?;
    let scored = exec.map(&order, |rec| {
        score_record(rec, responses.get(&rec.id).map(String::as_str), presets, opts.parse)
    });
    Ok(ScoreReport {
        rows: ScoreReport::aggregate(&scored),
        records: scored,
    })
}

pub fn score_record(
    rec: &EvalRecord,
    response: Option<&str>,
    presets: &PresetTable,
    parse_opts: ParseOptions,
) -> RecordScore {
    let mut out = RecordScore {
        id: rec.id.clone(),
        task: rec.task,
        missing: response.is_none(),
        format_ok: false,
        metrics: BTreeMap::new(),
        reward: None,
        error: None,
    };
    let Some(raw) = response else {
        fill_failed_metrics(rec.task, &mut out.metrics);
        return out;
    };
    let parsed = parse_with(raw, rec.task, parse_opts);
    out.format_ok = parsed.tags_valid;
    if let Err(e) = record_metrics(rec, &parsed, &mut out.metrics) {
        out.error = Some(e.to_string());
    }
    match presets.get(rec.task) {
        Some(spec) => match compose(&parsed, &rec.verification, spec) {
            Ok(b) => out.reward = Some(b.total),
            Err(e) => {
                out.error.get_or_insert_with(|| e.to_string());
            }
        },
        None => {
            out.error.get_or_insert_with(|| format!("no preset for task {}", rec.task));
        }
    }
    out
}

/// Metrics of a record whose response failed the format gate or is missing.
fn fill_failed_metrics(task: TaskKind, m: &mut BTreeMap<String, f64>) {
    for &metric in task_metrics(task) {
        if is_fraction(metric) {
            m.insert(metric.to_string(), 0.0);
        }
    }
}

fn record_metrics(rec: &EvalRecord, parsed: &ParsedResponse, m: &mut BTreeMap<String, f64>) -> Result<()> {
    if rec.task == TaskKind::VTG {
        // trace quality is measured whatever the format verdict
        let Verification::Trace(gt) = &rec.verification else {
            unreachable!("validated at load")
        };
        if let Some((rmse, mae)) = trace_errors(&parsed.points, gt)? {
            m.insert(METRIC_RMSE.into(), rmse);
            m.insert(METRIC_MAE.into(), mae);
        }
        return Ok(());
    }
    if !parsed.tags_valid {
        fill_failed_metrics(rec.task, m);
        return Ok(());
    }
    match &rec.verification {
        Verification::Choice(answer) => {
            m.insert(METRIC_ACCURACY.into(), r_acc(parsed, answer));
        }
        Verification::Mask { mask, .. } => {
            let acc = r_mask(&parsed.points, mask, Default::default())?;
            let any = parsed.points.iter().any(|&p| mask.contains(p));
            m.insert(METRIC_ACCURACY.into(), acc);
            m.insert(METRIC_ACCURACY_ANY.into(), if any { 1.0 } else { 0.0 });
        }
        Verification::Relation(task) => {
            let ok = RelationChecker(task).check(parsed).map_err(Error::CheckerFailure);
            let value = match ok {
                Ok(true) => 1.0,
                Ok(false) => 0.0,
                Err(e) => {
                    m.insert(METRIC_SUCCESS.into(), 0.0);
                    return Err(e);
                }
            };
            m.insert(METRIC_SUCCESS.into(), value);
        }
        Verification::Trace(_) => unreachable!("validated at load"),
    }
    Ok(())
}

/// RMSE and MAE of a predicted point list against a ground-truth trace. A
/// prediction with a single point (or zero length) is treated as a constant
/// path; an empty one has no defined error.
pub fn trace_errors(pred: &[Point2D], gt: &Trajectory2D) -> Result<Option<(f64, f64)>> {
    if pred.is_empty() {
        return Ok(None);
    }
    let n = pred.len().max(gt.len());
    let rp = match resample_points(pred, n) {
        Ok(p) => p,
        Err(Error::DegenerateTrajectory(_)) => vec![pred[0]; n],
        Err(e) => return Err(e),
    };
    let rg = resample_points(gt.points(), n)?;
    let d: Vec<f64> = rp.iter().zip(&rg).map(|(&p, &q)| euclidean(p, q)).collect();
    let rmse = (d.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    let mae = d.iter().sum::<f64>() / n as f64;
    Ok(Some((rmse, mae)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            _ => Err(format!("unknown report format `{s}`")),
        }
    }
}

/// Human formats print two decimals; with `percent`, fraction metrics are
/// scaled by 100 first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmitOptions {
    pub format: ReportFormat,
    pub percent: bool,
}

impl EmitOptions {
    pub fn new(format: ReportFormat) -> Self {
        Self { format, percent: true }
    }
}

const COLUMNS: [&str; 5] = ["task", "metric", "value", "n", "format_failures"];

fn human_value(row: &ReportRow, percent: bool) -> String {
    if row.value.is_nan() {
        return "n/a".into();
    }
    let v = if percent && is_fraction(&row.metric) {
        row.value * 100.0
    } else {
        row.value
    };
    format!("{v:.2}")
}

pub fn render_report(report: &ScoreReport, opts: EmitOptions) -> String {
    let mut s = String::new();
    match opts.format {
        ReportFormat::Csv => {
            s.push_str(&COLUMNS.join(","));
            s.push('\n');
            for r in &report.rows {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{}",
                    r.task,
                    r.metric,
                    human_value(r, opts.percent),
                    r.n,
                    r.format_failures
                );
            }
        }
        ReportFormat::Markdown => {
            let _ = writeln!(s, "| {} |", COLUMNS.join(" | "));
            let _ = writeln!(s, "|{}|", ["---"; 5].join("|"));
            for r in &report.rows {
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {} |",
                    r.task,
                    r.metric,
                    human_value(r, opts.percent),
                    r.n,
                    r.format_failures
                );
            }
        }
        ReportFormat::Json => {
            let rows: Vec<serde_json::Value> = report
                .rows
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "task": r.task,
                        "metric": r.metric,
                        "value": if r.value.is_nan() { serde_json::Value::Null } else { r.value.into() },
                        "n": r.n,
                        "format_failures": r.format_failures,
                    })
                })
                .collect();
            let doc = serde_json::json!({ "rows": rows, "records": report.records });
            s = serde_json::to_string_pretty(&doc).expect("report serializes");
            s.push('\n');
        }
    }
    s
}

pub fn emit_report(report: &ScoreReport, opts: EmitOptions, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_report(report, opts)).map_err(|e| Error::unwritable(path, e))
}
