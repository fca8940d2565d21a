//! Emitted files. Series go to CSV with a header row; summaries and
//! manifests are single JSON objects whose key order follows the struct
//! field order.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRow {
    pub seed: u64,
    pub arch: String,
    pub method: String,
    pub chunk_index: usize,
    pub size: usize,
    pub accuracy: f64,
    pub mcc: f64,
    pub auc: Option<f64>,
    pub drift: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub seed: u64,
    pub arch: String,
    pub method: String,
    pub chunk_index: usize,
    pub instance_index: usize,
    pub detector_width_before: usize,
    pub labels_requested: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub arch: String,
    pub method: String,
    pub accuracy: f64,
    pub mcc: f64,
    pub auc: Option<f64>,
    pub drift_count: usize,
    pub label_requests: usize,
    pub retrain_count: usize,
    pub final_ensemble_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub runs: Vec<RunSummary>,
}

/// Seed-averaged scores for one (method, architecture) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: String,
    pub arch: String,
    pub seeds: usize,
    pub accuracy: f64,
    pub mcc: f64,
    pub auc: Option<f64>,
    pub drift_count: f64,
    pub label_requests: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub delta: f64,
    pub m: usize,
    pub init_count: usize,
    pub k_anonymity: usize,
    pub bound: f64,
    pub recur_freq: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub versions: Versions,
    pub outputs: Vec<String>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub wall_time_ms: Vec<RunTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub ipdd_cli: String,
    pub ipdd_core: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub seed: u64,
    pub arch: String,
    pub method: String,
    pub ms: u128,
}

pub fn write_rows<R: Serialize>(path: &Path, rows: &[R]) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::runtime(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

/// Writes a header even when there are no rows.
pub fn write_rows_with_header<R: Serialize>(path: &Path, header: &[&str], rows: &[R]) -> Result<(), CliError> {
    if rows.is_empty() {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        w.write_record(header)
            .and_then(|_| w.flush().map_err(csv::Error::from))
            .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
    } else {
        write_rows(path, rows)
    }
}

pub fn read_rows<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>, CliError> {
    let io = |e: csv::Error| CliError::runtime(format!("{}: {e}", path.display()));
    csv::Reader::from_path(path)
        .map_err(io)?
        .deserialize()
        .collect::<Result<Vec<R>, _>>()
        .map_err(io)
}

pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::runtime(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    writeln!(w).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_json<V: for<'de> Deserialize<'de>>(path: &Path) -> Result<V, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

/// Single-series SVG line chart with optional vertical markers.
pub fn line_chart(title: &str, points: &[(f64, f64)], markers: &[f64]) -> String {
    const W: f64 = 800.0;
    const H: f64 = 300.0;
    const PAD: f64 = 40.0;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let path: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{PAD}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n\
         <text x=\"4\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\">{y1:.3}</text>\n\
         <text x=\"4\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\">{y0:.3}</text>\n\
         <line x1=\"{PAD}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        escape(title),
        sy(y1) + 4.0,
        sy(y0),
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD,
    );
    for &m in markers {
        let x = sx(m);
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{PAD}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"red\" stroke-dasharray=\"4 3\"/>\n",
            H - PAD
        ));
    }
    svg.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1\" points=\"{}\"/>\n</svg>\n",
        path.join(" ")
    ));
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
