//! Consolidated report over earlier runs, checked against their manifests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cci_core::Score;
use serde::{Deserialize, Serialize};

use crate::commands::{score_cell, MeasureOutput, Run};
use crate::error::{CliError, Context};
use crate::manifest::{sha256_hex, FileDigest, RunManifest};

/// One (method, language group, persona) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub group: String,
    pub persona: String,
    pub kappa_s: Score,
    pub kappa_valid: Score,
    pub soft: f64,
    pub hard: f64,
    pub mode_freq: f64,
    pub error_rate: f64,
    #[serde(rename = "N")]
    pub samples: usize,
    pub bootstrap_variance: Option<f64>,
    pub manifest: String,
    pub manifest_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub group: String,
    pub metric: String,
    pub min: Option<f64>,
    pub avg: Option<f64>,
    pub max: Option<f64>,
    pub defined: usize,
    pub total: usize,
    pub manifest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub command: String,
    pub manifest: String,
    pub manifest_sha256: String,
    pub outputs: Vec<FileDigest>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsolidatedReport {
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<AggregateRow>,
    pub artifacts: Vec<Artifact>,
}

fn resolve(base: &Path, recorded: &str) -> PathBuf {
    let p = Path::new(recorded);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads every output listed in a manifest and checks its digest.
fn verified_outputs(
    run: &mut Run,
    manifest_path: &Path,
    manifest: &RunManifest,
) -> Result<Vec<(String, Vec<u8>)>, CliError> {
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for d in &manifest.outputs {
        let path = resolve(base, &d.path);
        let bytes = run
            .read(&path)
            .map_err(|e| e.context(format!("output listed in {}", manifest_path.display())))?;
        let actual = sha256_hex(&bytes);
        if actual != d.sha256 {
            return Err(CliError::input(format!(
                "stale output {}: sha256 {actual} does not match {} recorded in {}",
                path.display(),
                d.sha256,
                manifest_path.display()
            )));
        }
        out.push((d.path.clone(), bytes));
    }
    Ok(out)
}

pub(crate) fn consolidate(run: &mut Run, manifests: &[PathBuf]) -> Result<(), CliError> {
    let mut report = ConsolidatedReport::default();
    for path in manifests {
        let bytes = run.read(path)?;
        let manifest: RunManifest = serde_json::from_slice(&bytes).context(path.display())?;
        let label = path.display().to_string();
        let manifest_sha256 = sha256_hex(&bytes);
        let outputs = verified_outputs(run, path, &manifest)?;
        if manifest.command == "measure" {
            let (name, body) = outputs
                .iter()
                .find(|(name, _)| Path::new(name).file_name().is_some_and(|f| f == "measure.json"))
                .ok_or_else(|| CliError::input(format!("{label}: no measure.json output")))?;
            let measure: MeasureOutput = serde_json::from_slice(body).context(name)?;
            for g in &measure.groups {
                for s in &g.slices {
                    let r = &s.report;
                    report.rows.push(ReportRow {
                        method: measure.method.clone(),
                        group: g.group.clone(),
                        persona: s.persona.clone(),
                        kappa_s: r.kappa_s,
                        kappa_valid: r.kappa_valid,
                        soft: r.soft,
                        hard: r.hard,
                        mode_freq: r.mode_freq,
                        error_rate: r.error_rate,
                        samples: r.samples,
                        bootstrap_variance: s.bootstrap.as_ref().map(|b| b.variance),
                        manifest: label.clone(),
                        manifest_sha256: manifest_sha256.clone(),
                    });
                }
                for (metric, a) in &g.aggregate {
                    report.aggregates.push(AggregateRow {
                        method: measure.method.clone(),
                        group: g.group.clone(),
                        metric: metric.clone(),
                        min: a.min,
                        avg: a.avg,
                        max: a.max,
                        defined: a.defined,
                        total: a.total,
                        manifest: label.clone(),
                    });
                }
            }
        }
        report.artifacts.push(Artifact {
            command: manifest.command.clone(),
            manifest: label,
            manifest_sha256,
            outputs: manifest.outputs.clone(),
        });
    }
    println!(
        "{} runs, {} metric rows, {} aggregate rows",
        report.artifacts.len(),
        report.rows.len(),
        report.aggregates.len()
    );
    run.outputs.add("report.txt", render_text(&report).into_bytes());
    run.outputs.add_json("report.json", &report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn fmt_score(s: Score) -> String {
    s.value().map_or_else(|| score_cell(s), |x| format!("{x:.4}"))
}

/// Fixed-width plain-text rendering of the report.
pub fn render_text(report: &ConsolidatedReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:<16} {:<8} {:>10} {:>10} {:>8} {:>8} {:>8} {:>8} {:>6}",
        "method", "group", "persona", "kappa_s", "kappa", "soft", "hard", "mode", "error", "N"
    );
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{:<16} {:<16} {:<8} {:>10} {:>10} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>6}",
            r.method,
            r.group,
            r.persona,
            fmt_score(r.kappa_s),
            fmt_score(r.kappa_valid),
            r.soft,
            r.hard,
            r.mode_freq,
            r.error_rate,
            r.samples
        );
    }
    out.push('\n');
    let _ = writeln!(
        out,
        "{:<16} {:<16} {:<26} {:>8} {:>8} {:>8} {:>8}",
        "method", "group", "metric", "min", "avg", "max", "defined"
    );
    for a in &report.aggregates {
        let _ = writeln!(
            out,
            "{:<16} {:<16} {:<26} {:>8} {:>8} {:>8} {:>8}",
            a.method,
            a.group,
            a.metric,
            fmt_opt(a.min),
            fmt_opt(a.avg),
            fmt_opt(a.max),
            format!("{}/{}", a.defined, a.total)
        );
    }
    out
}
