//! Prequential stream evaluation of the integrally private drift detector
//! and its comparison pipelines.
//!
//! Every pipeline trains on the initial block, then predicts each chunk
//! before (possibly) learning from it. Pipelines other than `adwin_unlim`
//! only see true labels through [`LabelLedger::request`], which happens
//! exclusively when their detector fires.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand_distr::{Distribution, StandardNormal};

use crate::datasets::{chunk_stream, LabeledDataset, StreamChunk};
use crate::detector::{predictive_entropy, Adwin};
use crate::ensemble::{build_ensemble, Ensemble, EnsembleConfig};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, auc, mcc, ChunkMetrics, ConfusionMatrix, MetricsReport};
use crate::nn::{forward, init_model, sgd_with, train, ModelParams, TrainConfig};
use crate::rng::{derive_path, derive_seed, rng_from, tags};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Ipdd,
    NoRetrain,
    AdwinUnlim,
    AdwinLim,
    Dp(f64),
}

impl Method {
    pub fn uses_labels_only_on_drift(self) -> bool {
        matches!(self, Method::Ipdd | Method::AdwinLim | Method::Dp(_))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Ipdd => f.write_str("ipdd"),
            Method::NoRetrain => f.write_str("no_retrain"),
            Method::AdwinUnlim => f.write_str("adwin_unlim"),
            Method::AdwinLim => f.write_str("adwin_lim"),
            Method::Dp(eps) => write!(f, "dp({eps:?})"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    /// Accepts `ipdd`, `no_retrain`, `adwin_unlim`, `adwin_lim`, `dp(ε)` and `dp_ε`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let eps = |v: &str| -> Result<Method> {
            let e: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad DP epsilon `{v}`")))?;
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::InvalidParameter(format!("DP epsilon must be positive, got {e}")));
            }
            Ok(Method::Dp(e))
        };
        match s.as_str() {
            "ipdd" => Ok(Method::Ipdd),
            "no_retrain" => Ok(Method::NoRetrain),
            "adwin_unlim" => Ok(Method::AdwinUnlim),
            "adwin_lim" => Ok(Method::AdwinLim),
            _ => {
                if let Some(inner) = s.strip_prefix("dp(").and_then(|r| r.strip_suffix(')')) {
                    eps(inner)
                } else if let Some(inner) = s.strip_prefix("dp_") {
                    eps(inner)
                } else {
                    Err(Error::InvalidParameter(format!("unknown method `{s}`")))
                }
            }
        }
    }
}

/// Gradient perturbation settings for the DP baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpConfig {
    pub clip: f64,
    pub delta: f64,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self { clip: 1.0, delta: 1e-5 }
    }
}

impl DpConfig {
    /// `σ = C·√(2 ln(1.25/δ)) / ε`.
    pub fn noise_std(&self, epsilon: f64) -> f64 {
        self.clip * (2.0 * (1.25 / self.delta).ln()).sqrt() / epsilon
    }
}

/// Scales `g` so its Euclidean norm is at most `clip`.
pub fn clip_gradient<T: Scalar>(g: &mut [T], clip: f64) {
    let norm = g.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
    if norm > clip {
        let s = T::of(clip / norm);
        g.iter_mut().for_each(|v| *v *= s);
    }
}

/// Minibatch SGD whose mean minibatch gradients are clipped and perturbed with
/// spherical Gaussian noise. Batches are identical to [`train`] with the same
/// config; the noise stream is derived from `cfg.shuffle_seed`.
pub fn dp_train<T: Scalar>(
    model: &ModelParams<T>,
    data: &LabeledDataset<T>,
    cfg: &TrainConfig,
    epsilon: f64,
    dp: &DpConfig,
) -> Result<ModelParams<T>> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    let sigma = dp.noise_std(epsilon);
    let mut rng = rng_from(derive_seed(cfg.shuffle_seed, tags::DP_NOISE));
    sgd_with(model, data, cfg, |g| {
        clip_gradient(g, dp.clip);
        for v in g.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += T::of(sigma * z);
        }
    })
}

/// Bounded retraining buffer; the oldest records are evicted first.
#[derive(Debug, Clone)]
pub struct TrainingWindow<T> {
    records: VecDeque<(Vec<T>, usize)>,
    capacity: usize,
    appended: usize,
    schema: LabeledDataset<T>,
}

impl<T: Scalar> TrainingWindow<T> {
    pub fn new(capacity: usize, schema: &LabeledDataset<T>) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidParameter("window capacity must be positive".into()));
        }
        Ok(Self {
            records: VecDeque::with_capacity(capacity),
            capacity,
            appended: 0,
            schema: schema.empty_like(),
        })
    }

    pub fn push(&mut self, x: &[T], label: usize) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back((x.to_vec(), label));
        self.appended += 1;
    }

    pub fn extend(&mut self, data: &LabeledDataset<T>) {
        for (x, &y) in data.rows().zip(&data.labels) {
            self.push(x, y);
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Count of records ever appended; the window holds the last `len()` of them.
    pub fn appended(&self) -> usize {
        self.appended
    }

    pub fn records(&self) -> impl Iterator<Item = (&[T], usize)> {
        self.records.iter().map(|(x, y)| (x.as_slice(), *y))
    }

    pub fn dataset(&self) -> LabeledDataset<T> {
        let mut out = self.schema.empty_like();
        for (x, y) in &self.records {
            out.push(x, *y);
        }
        out
    }
}

/// Counts every true label a pipeline obtains for learning.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct LabelLedger {
    requested: usize,
}

impl LabelLedger {
    pub fn request<'a, T: Scalar>(&mut self, chunk: &'a StreamChunk<T>) -> &'a LabeledDataset<T> {
        self.requested += chunk.len();
        &chunk.data
    }

    pub fn requested(&self) -> usize {
        self.requested
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DriftEvent {
    pub chunk_index: usize,
    /// Position of the triggering instance in the full stream.
    pub instance_index: usize,
    /// Detector width when the cut was found (including the new value).
    pub detector_width_before: usize,
    pub labels_requested: usize,
}

/// Members' class distributions and their argmax of the mean; ties go to the
/// lowest class id.
pub fn committee_predict<T: Scalar>(members: &[ModelParams<T>], x: &[T]) -> Result<(usize, Vec<Vec<T>>)> {
    if members.is_empty() {
        return Err(Error::Empty("ensemble"));
    }
    let probs = members.iter().map(|m| forward(m, x)).collect::<Result<Vec<_>>>()?;
    Ok((argmax(&mean_distribution(&probs)), probs))
}

pub fn ensemble_predict<T: Scalar>(ensemble: &Ensemble<T>, x: &[T]) -> Result<(usize, Vec<Vec<T>>)> {
    committee_predict(&ensemble.members, x)
}

pub fn mean_distribution<T: Scalar>(probs: &[Vec<T>]) -> Vec<T> {
    let mut mean = vec![T::zero(); probs[0].len()];
    for p in probs {
        for (m, &v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    let scale = T::one() / T::of_usize(probs.len());
    mean.iter_mut().for_each(|m| *m *= scale);
    mean
}

fn argmax<T: Scalar>(p: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamConfig {
    /// Architecture, training, Δ, m, N, k and seed shared by every pipeline.
    pub ensemble: EnsembleConfig,
    pub adwin_delta: f64,
    pub init_frac: f64,
    pub chunk_frac: f64,
    /// Training window capacity; defaults to twice the initial block.
    pub window_capacity: Option<usize>,
    pub dp: DpConfig,
}

impl StreamConfig {
    pub fn new(ensemble: EnsembleConfig) -> Self {
        Self {
            ensemble,
            adwin_delta: 0.001,
            init_frac: 0.10,
            chunk_frac: 0.02,
            window_capacity: None,
            dp: DpConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkPredictions<T> {
    pub chunk_index: usize,
    pub start: usize,
    pub classes: Vec<usize>,
    /// Mean class distribution per instance.
    pub probs: Vec<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct RunResult<T> {
    pub method: Method,
    pub predictions: Vec<ChunkPredictions<T>>,
    pub metrics: MetricsReport,
    pub drift_events: Vec<DriftEvent>,
    /// Value fed to the detector per stream instance, as `(position, value)`.
    pub signal: Vec<(usize, f64)>,
    pub label_requests: usize,
    pub retrain_count: usize,
    /// Effective ensemble size after each (re)training.
    pub ensemble_sizes: Vec<usize>,
    pub wall_time: Duration,
}

impl<T: PartialEq> PartialEq for RunResult<T> {
    /// Equality ignores wall time.
    fn eq(&self, other: &Self) -> bool {
        self.method == other.method
            && self.predictions == other.predictions
            && self.metrics == other.metrics
            && self.drift_events == other.drift_events
            && self.signal == other.signal
            && self.label_requests == other.label_requests
            && self.retrain_count == other.retrain_count
            && self.ensemble_sizes == other.ensemble_sizes
    }
}

fn fit<T: Scalar>(
    method: Method,
    data: &LabeledDataset<T>,
    cfg: &StreamConfig,
    round: usize,
) -> Result<Vec<ModelParams<T>>> {
    let ens = &cfg.ensemble;
    let seed = if round == 0 {
        ens.seed
    } else {
        derive_path(ens.seed, &[tags::RETRAIN, round as u64])
    };
    let train_cfg = TrainConfig {
        batch_size: ens.train.batch_size.min(data.len()),
        ..ens.train.clone()
    };
    match method {
        Method::Ipdd => {
            let round_cfg = EnsembleConfig {
                seed,
                subsample_size: ens
                    .subsample_size
                    .filter(|&n| n * ens.subsample_count <= data.len()),
                ..ens.clone()
            };
            Ok(build_ensemble(data, &round_cfg)?.ensemble.members)
        }
        Method::NoRetrain | Method::AdwinUnlim => {
            let init = init_model(&ens.arch, seed);
            Ok(vec![train(&init, data, &train_cfg.with_seed(derive_seed(seed, tags::MEMBER)))?])
        }
        Method::AdwinLim | Method::Dp(_) => {
            use rayon::prelude::*;
            (0..ens.k)
                .into_par_iter()
                .map(|j| {
                    let member_seed = derive_path(seed, &[tags::MEMBER, j as u64]);
                    let init = init_model(&ens.arch, member_seed);
                    let job = train_cfg.with_seed(member_seed);
                    match method {
                        Method::Dp(eps) => dp_train(&init, data, &job, eps, &cfg.dp),
                        _ => train(&init, data, &job),
                    }
                })
                .collect()
        }
    }
}

/// Runs one pipeline over a temporally ordered dataset.
pub fn run_method<T: Scalar>(method: Method, dataset: &LabeledDataset<T>, cfg: &StreamConfig) -> Result<RunResult<T>> {
    let started = Instant::now();
    let (initial, chunks) = chunk_stream(dataset, cfg.init_frac, cfg.chunk_frac)?;
    let capacity = cfg.window_capacity.unwrap_or(2 * initial.len());
    let mut window = TrainingWindow::new(capacity, &initial)?;
    window.extend(&initial);
    let mut members = fit(method, &window.dataset(), cfg, 0)?;
    let mut ensemble_sizes = vec![members.len()];
    let mut detector = Adwin::new(cfg.adwin_delta)?;
    let mut ledger = LabelLedger::default();
    let mut predictions = Vec::with_capacity(chunks.len());
    let mut drift_events = Vec::new();
    let mut signal = Vec::new();
    let mut retrain_count = 0;

    for chunk in &chunks {
        let mut classes = Vec::with_capacity(chunk.len());
        let mut probs = Vec::with_capacity(chunk.len());
        let mut entropies = Vec::with_capacity(chunk.len());
        for x in chunk.data.rows() {
            let (class, member_probs) = committee_predict(&members, x)?;
            entropies.push(predictive_entropy(&member_probs)?.as_f64());
            probs.push(mean_distribution(&member_probs));
            classes.push(class);
        }

        let mut event = None;
        if method != Method::NoRetrain {
            // adwin_unlim watches its own 0/1 error, which needs every label
            let values: Vec<f64> = if method == Method::AdwinUnlim {
                let labels = &ledger.request(chunk).labels;
                classes.iter().zip(labels).map(|(p, y)| (p != y) as u8 as f64).collect()
            } else {
                entropies
            };
            for (i, &v) in values.iter().enumerate() {
                let position = chunk.start + i;
                signal.push((position, v));
                let width = detector.width() + 1;
                if detector.update(v)?.drift {
                    event = Some((position, width));
                    break;
                }
            }
        }

        if method == Method::AdwinUnlim {
            window.extend(&chunk.data);
        }
        if let Some((instance_index, width)) = event {
            let labels_requested = if method == Method::AdwinUnlim {
                0
            } else {
                let labeled = ledger.request(chunk);
                window.extend(labeled);
                chunk.len()
            };
            retrain_count += 1;
            members = fit(method, &window.dataset(), cfg, retrain_count).map_err(|e| Error::Retrain {
                chunk: chunk.chunk_index,
                source: Box::new(e),
            })?;
            ensemble_sizes.push(members.len());
            detector.reset();
            drift_events.push(DriftEvent {
                chunk_index: chunk.chunk_index,
                instance_index,
                detector_width_before: width,
                labels_requested,
            });
        }
        predictions.push(ChunkPredictions {
            chunk_index: chunk.chunk_index,
            start: chunk.start,
            classes,
            probs,
        });
    }

    let metrics = evaluate(&chunks, &predictions, &drift_events, dataset.num_classes)?;
    Ok(RunResult {
        method,
        predictions,
        metrics,
        drift_events,
        signal,
        label_requests: ledger.requested(),
        retrain_count,
        ensemble_sizes,
        wall_time: started.elapsed(),
    })
}

/// Integrally private drift detection over a stream.
pub fn run_ipdd<T: Scalar>(dataset: &LabeledDataset<T>, cfg: &StreamConfig) -> Result<RunResult<T>> {
    run_method(Method::Ipdd, dataset, cfg)
}

/// One of the comparison pipelines.
pub fn run_baseline<T: Scalar>(kind: Method, dataset: &LabeledDataset<T>, cfg: &StreamConfig) -> Result<RunResult<T>> {
    if kind == Method::Ipdd {
        return Err(Error::InvalidParameter("ipdd is not a baseline; use run_ipdd".into()));
    }
    run_method(kind, dataset, cfg)
}

/// Scores every post-initialization prediction, per chunk and overall.
pub fn evaluate<T: Scalar>(
    chunks: &[StreamChunk<T>],
    predictions: &[ChunkPredictions<T>],
    events: &[DriftEvent],
    num_classes: usize,
) -> Result<MetricsReport> {
    let mut all_truth = Vec::new();
    let mut all_pred = Vec::new();
    let mut all_probs = Vec::new();
    let mut per_chunk = Vec::with_capacity(chunks.len());
    for (chunk, p) in chunks.iter().zip(predictions) {
        let truth = &chunk.data.labels;
        per_chunk.push(ChunkMetrics {
            chunk_index: chunk.chunk_index,
            size: chunk.len(),
            accuracy: accuracy(truth, &p.classes)?,
            mcc: mcc(&ConfusionMatrix::from_labels(truth, &p.classes, num_classes)?),
            auc: auc(truth, &p.probs, num_classes).ok(),
            drift: events.iter().any(|e| e.chunk_index == chunk.chunk_index),
        });
        all_truth.extend_from_slice(truth);
        all_pred.extend_from_slice(&p.classes);
        all_probs.extend(p.probs.iter().cloned());
    }
    Ok(MetricsReport {
        accuracy: accuracy(&all_truth, &all_pred)?,
        mcc: mcc(&ConfusionMatrix::from_labels(&all_truth, &all_pred, num_classes)?),
        auc: auc(&all_truth, &all_probs, num_classes).ok(),
        drift_count: events.len(),
        per_chunk,
    })
}
