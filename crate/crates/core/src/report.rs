//! Reading run reports back and rendering them for people.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimizer::{Mode, RunReport};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path} is not a run report: {source}")]
    Parse { path: String, source: serde_json::Error },
}

/// Accepts a report file or a run directory containing `report.json`.
pub fn load_report(path: &Path) -> Result<RunReport, ReportError> {
    let file = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
    let shown = file.display().to_string();
    let body = std::fs::read(&file).map_err(|source| ReportError::Io {
        path: shown.clone(),
        source,
    })?;
    serde_json::from_slice(&body).map_err(|source| ReportError::Parse { path: shown, source })
}

/// Sample mean and standard error (sample standard deviation / sqrt n).
/// A single value has standard error 0.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mode: Mode,
    pub runs: usize,
    pub dev_mean: f64,
    pub dev_se: f64,
    /// Over runs that reached a test score.
    pub test_mean: Option<f64>,
    pub test_se: Option<f64>,
    pub calls_mean: f64,
    pub failed_runs: usize,
}

/// One row per mode present, in canonical mode order.
pub fn aggregate(reports: &[RunReport]) -> Vec<Aggregate> {
    Mode::ALL
        .into_iter()
        .filter_map(|mode| {
            let group: Vec<&RunReport> = reports.iter().filter(|r| r.mode == mode).collect();
            if group.is_empty() {
                return None;
            }
            let dev: Vec<f64> = group.iter().filter_map(|r| r.best.as_ref().map(|b| b.dev_f1)).collect();
            let test: Vec<f64> = group.iter().filter_map(|r| r.best.as_ref().and_then(|b| b.test_f1)).collect();
            let (dev_mean, dev_se) = mean_se(&dev);
            let (test_mean, test_se) = if test.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_se(&test);
                (Some(m), Some(s))
            };
            let calls: Vec<f64> = group.iter().map(|r| r.calls.total as f64).collect();
            Some(Aggregate {
                mode,
                runs: group.len(),
                dev_mean,
                dev_se,
                test_mean,
                test_se,
                calls_mean: mean_se(&calls).0,
                failed_runs: group.iter().filter(|r| r.failure.is_some()).count(),
            })
        })
        .collect()
}

fn score(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

/// Final scores, the per-step curve, call counts and the best prompt.
pub fn render_summary(r: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "mode {}, seed {}", r.mode.name(), r.seed);
    let _ = writeln!(out, "{:>4}  {:>11}  {:>4}  {:>10}", "step", "best dev F1", "beam", "candidates");
    for s in &r.steps {
        let _ = writeln!(
            out,
            "{:>4}  {:>11.4}  {:>4}  {:>10}",
            s.step,
            s.best_dev_f1,
            s.beam.len(),
            s.candidates_considered
        );
    }
    match &r.best {
        Some(b) => {
            let _ = writeln!(out, "final: dev F1 {:.4}, test F1 {}", b.dev_f1, score(b.test_f1));
        }
        None => {
            let _ = writeln!(out, "final: no completed step");
        }
    }
    let c = &r.calls;
    let _ = writeln!(
        out,
        "calls: {} total ({} classify, {} gradient, {} edit, {} paraphrase), {} cache hits, {} failed",
        c.total, c.classify, c.gradient, c.edit, c.paraphrase, c.cache_hits, c.failed
    );
    for w in &r.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    if let Some(f) = &r.failure {
        let _ = writeln!(out, "FAILED: {f}");
    }
    if let Some(b) = &r.best {
        let _ = writeln!(out, "best prompt ({}):", b.candidate.id);
        let _ = writeln!(out, "{}", b.candidate.template);
    }
    out
}

/// Side-by-side table of modes, with mean ± standard error over runs.
pub fn render_comparison(reports: &[RunReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8}  {:>4}  {:>17}  {:>17}  {:>9}",
        "mode", "runs", "dev F1", "test F1", "calls"
    );
    for a in aggregate(reports) {
        let test = match (a.test_mean, a.test_se) {
            (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
            _ => "-".into(),
        };
        let _ = write!(
            out,
            "{:<8}  {:>4}  {:>17}  {:>17}  {:>9.0}",
            a.mode.name(),
            a.runs,
            format!("{:.4} ± {:.4}", a.dev_mean, a.dev_se),
            test,
            a.calls_mean
        );
        if a.failed_runs > 0 {
            let _ = write!(out, "  ({} failed)", a.failed_runs);
        }
        out.push('\n');
    }
    out
}
