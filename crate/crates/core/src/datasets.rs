//! Labeled datasets, the drifting Sine generator, CSV ingestion and export,
//! and temporal chunking of a dataset into an initial block plus stream chunks.

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::scalar::Scalar;

/// Row-major feature matrix with dense class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    features: Vec<T>,
    dim: usize,
    pub labels: Vec<usize>,
    pub feature_names: Vec<String>,
    pub num_classes: usize,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(features: Vec<T>, dim: usize, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let names = (1..=dim).map(|i| format!("x{i}")).collect();
        Self::with_names(features, dim, labels, num_classes, names)
    }

    pub fn with_names(
        features: Vec<T>,
        dim: usize,
        labels: Vec<usize>,
        num_classes: usize,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("feature dimension must be positive".into()));
        }
        if features.len() != dim * labels.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * labels.len(),
                got: features.len(),
            });
        }
        if feature_names.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: feature_names.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        Ok(Self {
            features,
            dim,
            labels,
            feature_names,
            num_classes,
        })
    }

    /// Empty dataset sharing the schema of `self`.
    pub fn empty_like(&self) -> Self {
        Self {
            features: Vec::new(),
            dim: self.dim,
            labels: Vec::new(),
            feature_names: self.feature_names.clone(),
            num_classes: self.num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.features.chunks(self.dim)
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = self.empty_like();
        for &i in indices {
            out.features.extend_from_slice(self.row(i));
            out.labels.push(self.labels[i]);
        }
        out
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            features: self.features[range.start * self.dim..range.end * self.dim].to_vec(),
            dim: self.dim,
            labels: self.labels[range].to_vec(),
            feature_names: self.feature_names.clone(),
            num_classes: self.num_classes,
        }
    }

    pub fn push(&mut self, x: &[T], label: usize) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert!(label < self.num_classes);
        self.features.extend_from_slice(x);
        self.labels.push(label);
    }

    pub fn extend_from(&mut self, other: &Self) {
        self.features.extend_from_slice(&other.features);
        self.labels.extend_from_slice(&other.labels);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftKind {
    Abrupt,
    Gradual,
    Incremental,
}

/// Where and how the concept changes in a generated stream.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftSpec {
    pub kind: DriftKind,
    pub positions: Vec<usize>,
    pub transition_length: usize,
}

impl DriftSpec {
    pub fn none() -> Self {
        Self {
            kind: DriftKind::Abrupt,
            positions: Vec::new(),
            transition_length: 1,
        }
    }

    pub fn abrupt(positions: Vec<usize>) -> Self {
        Self {
            kind: DriftKind::Abrupt,
            positions,
            transition_length: 1,
        }
    }

    pub fn gradual(positions: Vec<usize>, transition_length: usize) -> Self {
        Self {
            kind: DriftKind::Gradual,
            positions,
            transition_length,
        }
    }

    pub fn incremental(positions: Vec<usize>, transition_length: usize) -> Self {
        Self {
            kind: DriftKind::Incremental,
            positions,
            transition_length,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("drift positions must be strictly increasing".into()));
        }
        if let Some(&p) = self.positions.iter().find(|&&p| p >= n) {
            return Err(Error::InvalidParameter(format!(
                "drift position {p} outside a stream of {n} instances"
            )));
        }
        if self.kind != DriftKind::Abrupt && self.transition_length == 0 {
            return Err(Error::InvalidParameter("transition_length must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Progress of the `j`-th drift at instance `t`: 0 before it starts, 1 once
    /// complete, linear in between.
    pub fn progress(&self, j: usize, t: usize) -> f64 {
        let start = self.positions[j];
        if t < start {
            return 0.0;
        }
        if self.kind == DriftKind::Abrupt {
            return 1.0;
        }
        ((t - start) as f64 / self.transition_length as f64).min(1.0)
    }

    /// Probability that instance `t` follows the post-drift concept of drift `j`.
    pub fn mixing_probability(&self, j: usize, t: usize) -> f64 {
        self.progress(j, t)
    }
}

/// Base Sine concept: class 1 iff `x2 < sin(π·x1 + phase)`.
pub fn sine_label(x1: f64, x2: f64, phase: f64) -> usize {
    (x2 < (PI * x1 + phase).sin()) as usize
}

/// Four Uniform(0,1) attributes; the label depends on the first two only.
pub fn gen_sine<T: Scalar>(n: usize, drift: &DriftSpec, seed: u64) -> Result<LabeledDataset<T>> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    drift.validate(n)?;
    let mut rng = rng_from(seed);
    let mut features = Vec::with_capacity(n * 4);
    let mut labels = Vec::with_capacity(n);
    for t in 0..n {
        let x: [f64; 4] = std::array::from_fn(|_| rng.random::<f64>());
        let coin: f64 = rng.random();
        let label = match drift.kind {
            DriftKind::Abrupt | DriftKind::Gradual => {
                let flips = (0..drift.positions.len())
                    .filter(|&j| coin < drift.mixing_probability(j, t))
                    .count();
                sine_label(x[0], x[1], 0.0) ^ (flips % 2)
            }
            DriftKind::Incremental => {
                let phase: f64 = (0..drift.positions.len())
                    .map(|j| FRAC_PI_2 * drift.progress(j, t))
                    .sum();
                sine_label(x[0], x[1], phase)
            }
        };
        features.extend(x.iter().map(|&v| T::of(v)));
        labels.push(label);
    }
    LabeledDataset::new(features, 4, labels, 2)
}

/// Per-column min-max scaler fitted on a prefix of the data.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let mut mins = vec![f64::INFINITY; dim];
        let mut maxs = vec![f64::NEG_INFINITY; dim];
        for row in rows {
            for (j, &v) in row.iter().enumerate() {
                mins[j] = mins[j].min(v);
                maxs[j] = maxs[j].max(v);
            }
        }
        Self { mins, maxs }
    }

    /// Maps a value into `[0, 1]`. Constant columns map to 0, and values outside
    /// the fitted range are clamped.
    pub fn transform(&self, column: usize, v: f64) -> f64 {
        let (lo, hi) = (self.mins[column], self.maxs[column]);
        if hi <= lo {
            0.0
        } else {
            ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub label_column: String,
    /// Expected number of classes. Files with more distinct labels are rejected.
    pub class_count: Option<usize>,
    pub delimiter: u8,
    /// Fraction of leading rows whose statistics drive min-max scaling.
    pub scale_prefix_frac: f64,
    pub scale: bool,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            label_column: "label".into(),
            class_count: None,
            delimiter: b',',
            scale_prefix_frac: 0.10,
            scale: true,
        }
    }
}

/// Sorted distinct labels, numerically if every label parses as a number.
fn label_order(raw: &[String]) -> Vec<String> {
    let distinct: BTreeSet<&String> = raw.iter().collect();
    let mut out: Vec<String> = distinct.into_iter().cloned().collect();
    let numeric: Option<Vec<f64>> = out.iter().map(|s| s.trim().parse::<f64>().ok()).collect();
    if let Some(keys) = numeric {
        let mut paired: Vec<(f64, String)> = keys.into_iter().zip(out).collect();
        paired.sort_by(|a, b| a.0.total_cmp(&b.0));
        out = paired.into_iter().map(|p| p.1).collect();
    }
    out
}

pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<LabeledDataset<T>> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    if !path.exists() {
        return Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        });
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(true)
        .from_path(path)
        .map_err(csv_err)?;
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label_idx = header
        .iter()
        .position(|h| *h == schema.label_column)
        .ok_or_else(|| Error::MissingColumn {
            column: schema.label_column.clone(),
        })?;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        // rows are 1-based after the header line
        let row_no = r + 2;
        let mut row = Vec::with_capacity(feature_names.len());
        for (i, cell) in record.iter().enumerate() {
            if i == label_idx {
                raw_labels.push(cell.trim().to_string());
                continue;
            }
            let v: f64 = cell.trim().parse().map_err(|_| Error::NonNumeric {
                row: row_no,
                column: header.get(i).cloned().unwrap_or_default(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonNumeric {
                    row: row_no,
                    column: header[i].clone(),
                    value: cell.to_string(),
                });
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Empty("CSV file has no data rows"));
    }

    let order = label_order(&raw_labels);
    let num_classes = match schema.class_count {
        Some(c) => {
            if order.len() > c {
                let extra = &order[c];
                let row = raw_labels.iter().position(|l| l == extra).unwrap() + 2;
                return Err(Error::UnknownLabel {
                    row,
                    label: extra.clone(),
                });
            }
            c
        }
        None => order.len(),
    }
    .max(2);
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| order.iter().position(|o| o == l).unwrap())
        .collect();

    let dim = feature_names.len();
    let features: Vec<T> = if schema.scale {
        let prefix = ((rows.len() as f64 * schema.scale_prefix_frac).floor() as usize).clamp(1, rows.len());
        let scaler = MinMaxScaler::fit(&rows[..prefix]);
        rows.iter()
            .flat_map(|row| row.iter().enumerate().map(|(j, &v)| T::of(scaler.transform(j, v))).collect::<Vec<_>>())
            .collect()
    } else {
        rows.iter().flatten().map(|&v| T::of(v)).collect()
    };
    LabeledDataset::with_names(features, dim, labels, num_classes, feature_names)
}

/// Writes a dataset as a header row of feature names plus `label`.
pub fn write_csv<T: Scalar>(ds: &LabeledDataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = ds.feature_names.clone();
    header.push("label".into());
    w.write_record(&header).map_err(csv_err)?;
    for (row, &label) in ds.rows().zip(&ds.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{}", v.as_f64())).collect();
        rec.push(label.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// A block of consecutive stream instances.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamChunk<T> {
    pub chunk_index: usize,
    /// Position of the first row within the full stream.
    pub start: usize,
    pub data: LabeledDataset<T>,
}

impl<T: Scalar> StreamChunk<T> {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

fn count_for(n: usize, frac: f64) -> usize {
    (n as f64 * frac + 1e-9).floor() as usize
}

/// Splits a stream into its leading training block and equally sized chunks
/// (the last chunk may be short). Order is preserved.
pub fn chunk_stream<T: Scalar>(
    ds: &LabeledDataset<T>,
    init_frac: f64,
    chunk_frac: f64,
) -> Result<(LabeledDataset<T>, Vec<StreamChunk<T>>)> {
    if !(init_frac > 0.0 && chunk_frac > 0.0 && init_frac + chunk_frac <= 1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "fractions init={init_frac}, chunk={chunk_frac} out of range"
        )));
    }
    let n = ds.len();
    let init = count_for(n, init_frac);
    let chunk = count_for(n, chunk_frac);
    if init == 0 || chunk == 0 || init >= n {
        return Err(Error::InsufficientData {
            needed: init.max(1) + chunk.max(1),
            available: n,
        });
    }
    let chunks = (init..n)
        .step_by(chunk)
        .enumerate()
        .map(|(i, start)| StreamChunk {
            chunk_index: i,
            start,
            data: ds.slice(start..(start + chunk).min(n)),
        })
        .collect();
    Ok((ds.slice(0..init), chunks))
}
