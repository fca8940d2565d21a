//! Classification metrics and drift-event accounting.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `c × c` counts, rows are true classes and columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_labels(truth: &[usize], pred: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::DimensionMismatch {
                expected: truth.len(),
                got: pred.len(),
            });
        }
        let mut cm = Self::new(classes);
        for (&t, &p) in truth.iter().zip(pred) {
            let worst = t.max(p);
            if worst >= classes {
                return Err(Error::LabelOutOfRange {
                    label: worst,
                    num_classes: classes,
                });
            }
            cm.counts[t * classes + p] += 1;
        }
        Ok(cm)
    }

    /// Binary matrix with class 1 as the positive class.
    pub fn binary(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self {
            classes: 2,
            counts: vec![tn, fp, fn_, tp],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub fn accuracy(truth: &[usize], pred: &[usize]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::Empty("label vector"));
    }
    if truth.len() != pred.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    let hits = truth.iter().zip(pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Multiclass Matthews correlation (Gorodkin's R_K statistic).
///
/// Returns 0 when either the true or the predicted labels are constant.
pub fn mcc(cm: &ConfusionMatrix) -> f64 {
    let c = cm.classes;
    let s = cm.total() as f64;
    let correct: f64 = (0..c).map(|k| cm.get(k, k) as f64).sum();
    let t: Vec<f64> = (0..c).map(|k| (0..c).map(|p| cm.get(k, p) as f64).sum()).collect();
    let p: Vec<f64> = (0..c).map(|k| (0..c).map(|r| cm.get(r, k) as f64).sum()).collect();
    let tp: f64 = t.iter().zip(&p).map(|(a, b)| a * b).sum();
    let var_p = s * s - p.iter().map(|v| v * v).sum::<f64>();
    let var_t = s * s - t.iter().map(|v| v * v).sum::<f64>();
    if var_p <= 0.0 || var_t <= 0.0 {
        return 0.0;
    }
    ((s * correct - tp) / (var_p * var_t).sqrt()).clamp(-1.0, 1.0)
}

/// Mann–Whitney AUC of `scores` for the positive set, ties counting one half.
pub fn auc_binary<T: Scalar>(positive: &[bool], scores: &[T]) -> Result<f64> {
    if positive.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            expected: positive.len(),
            got: scores.len(),
        });
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc("both classes must be present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(std::cmp::Ordering::Equal));
    // average ranks over tie groups
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        pos_rank_sum += rank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// AUC from per-class probabilities: the positive-class column for two classes,
/// otherwise the macro average of one-vs-rest AUCs over classes present with
/// both outcomes.
pub fn auc<T: Scalar>(truth: &[usize], probs: &[Vec<T>], classes: usize) -> Result<f64> {
    if truth.len() != probs.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: probs.len(),
        });
    }
    if probs.iter().any(|p| p.len() != classes) {
        return Err(Error::DimensionMismatch {
            expected: classes,
            got: probs.iter().map(Vec::len).find(|&l| l != classes).unwrap(),
        });
    }
    let one_vs_rest = |k: usize| {
        let positive: Vec<bool> = truth.iter().map(|&t| t == k).collect();
        let scores: Vec<T> = probs.iter().map(|p| p[k]).collect();
        auc_binary(&positive, &scores)
    };
    if classes == 2 {
        return one_vs_rest(1);
    }
    let per_class: Vec<f64> = (0..classes).filter_map(|k| one_vs_rest(k).ok()).collect();
    if per_class.is_empty() {
        return Err(Error::UndefinedAuc("no class has both positives and negatives".into()));
    }
    Ok(per_class.iter().sum::<f64>() / per_class.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftAccounting {
    pub detected: usize,
    pub matched: usize,
    /// Mean chunks between an injected drift and its matching detection.
    pub mean_delay: f64,
    pub false_alarms: usize,
}

/// Matches detections (chunk indices, ascending) to injected drifts: each
/// detection claims the nearest unmatched injected drift at or before it and
/// within `tolerance` chunks, otherwise it is a false alarm.
pub fn drift_accounting(detections: &[usize], injected: &[usize], tolerance: usize) -> DriftAccounting {
    let mut used = vec![false; injected.len()];
    let mut delays = Vec::new();
    for &d in detections {
        let best = injected
            .iter()
            .enumerate()
            .filter(|&(i, &inj)| !used[i] && inj <= d && d - inj <= tolerance)
            .min_by_key(|&(_, &inj)| d - inj);
        if let Some((i, &inj)) = best {
            used[i] = true;
            delays.push((d - inj) as f64);
        }
    }
    let matched = delays.len();
    DriftAccounting {
        detected: detections.len(),
        matched,
        mean_delay: if matched == 0 { 0.0 } else { delays.iter().sum::<f64>() / matched as f64 },
        false_alarms: detections.len() - matched,
    }
}

/// Metrics of one evaluated chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkMetrics {
    pub chunk_index: usize,
    pub size: usize,
    pub accuracy: f64,
    pub mcc: f64,
    pub auc: Option<f64>,
    pub drift: bool,
}

/// Stream-level evaluation over every prediction made after initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub mcc: f64,
    pub auc: Option<f64>,
    pub drift_count: usize,
    pub per_chunk: Vec<ChunkMetrics>,
}
