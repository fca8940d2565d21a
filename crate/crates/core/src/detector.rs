//! Label-free drift signal and the change detector that consumes it.
//!
//! The signal is the predictive entropy of an ensemble: the Shannon entropy
//! of the members' mean class distribution. The detector is ADWIN over an
//! exponential histogram of the real-valued stream.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One per-instance uncertainty value as fed to the detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintySample<T> {
    pub value: T,
    pub instance_index: usize,
}

const SIMPLEX_TOL: f64 = 1e-6;

/// `H(p̄) = −Σ p̄ⱼ ln p̄ⱼ` where `p̄` is the mean of the member distributions.
pub fn predictive_entropy<T: Scalar>(member_probs: &[Vec<T>]) -> Result<T> {
    let first = member_probs.first().ok_or(Error::Empty("ensemble predictions"))?;
    let c = first.len();
    if c == 0 {
        return Err(Error::NotSimplex("zero-length distribution".into()));
    }
    let mut mean = vec![T::zero(); c];
    for (i, p) in member_probs.iter().enumerate() {
        if p.len() != c {
            return Err(Error::DimensionMismatch { expected: c, got: p.len() });
        }
        let total: f64 = p.iter().map(|v| v.as_f64()).sum();
        if (total - 1.0).abs() > SIMPLEX_TOL || p.iter().any(|v| !(v.as_f64() >= -SIMPLEX_TOL)) {
            return Err(Error::NotSimplex(format!("member {i} sums to {total}")));
        }
        for (m, &v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    let scale = T::one() / T::of_usize(member_probs.len());
    let h = mean
        .iter()
        .map(|&m| m * scale)
        .filter(|&p| p > T::zero())
        .map(|p| -p * p.ln())
        .sum::<T>();
    Ok(h.max(T::zero()).min(T::of_usize(c).ln()))
}

/// Summary of a run of consecutive stream values.
#[derive(Debug, Clone, Copy, PartialEq)]
struct HistBucket {
    sum: f64,
    /// Sum of squared deviations from the bucket mean.
    m2: f64,
    count: usize,
}

impl HistBucket {
    fn single(x: f64) -> Self {
        Self { sum: x, m2: 0.0, count: 1 }
    }

    fn merge(older: Self, newer: Self) -> Self {
        let (na, nb) = (older.count as f64, newer.count as f64);
        let d = older.sum / na - newer.sum / nb;
        Self {
            sum: older.sum + newer.sum,
            m2: older.m2 + newer.m2 + d * d * na * nb / (na + nb),
            count: older.count + newer.count,
        }
    }
}

/// ADWIN change detector over an exponential histogram.
///
/// Row `i` holds buckets summarising `2^i` values each, newest at the front.
/// A row may temporarily hold `max_buckets + 1` buckets before its two oldest
/// are merged into the next row.
#[derive(Debug, Clone)]
pub struct Adwin {
    delta: f64,
    max_buckets: usize,
    rows: Vec<VecDeque<HistBucket>>,
    width: usize,
    total: f64,
    m2: f64,
    detections: usize,
}

/// Outcome of one [`Adwin::update`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdwinUpdate {
    pub drift: bool,
    /// Elements removed from the tail of the window.
    pub dropped: usize,
}

impl Adwin {
    pub const DEFAULT_MAX_BUCKETS: usize = 5;

    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParameter(format!("ADWIN delta {delta} must lie in (0, 1)")));
        }
        Ok(Self {
            delta,
            max_buckets: Self::DEFAULT_MAX_BUCKETS,
            rows: Vec::new(),
            width: 0,
            total: 0.0,
            m2: 0.0,
            detections: 0,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Mean of the current window, 0 when empty.
    pub fn mean(&self) -> f64 {
        if self.width == 0 {
            0.0
        } else {
            self.total / self.width as f64
        }
    }

    /// Population variance of the current window.
    pub fn variance(&self) -> f64 {
        if self.width == 0 {
            0.0
        } else {
            self.m2 / self.width as f64
        }
    }

    pub fn detections(&self) -> usize {
        self.detections
    }

    pub fn bucket_count(&self) -> usize {
        self.rows.iter().map(VecDeque::len).sum()
    }

    /// Sizes of the histogram buckets from oldest to newest.
    pub fn bucket_sizes(&self) -> Vec<usize> {
        self.oldest_first().map(|b| b.count).collect()
    }

    pub fn reset(&mut self) {
        self.rows.clear();
        self.width = 0;
        self.total = 0.0;
        self.m2 = 0.0;
    }

    /// Cut threshold for sub-windows of `n0` and `n1` elements.
    ///
    /// `ε = √(ln(4/δ′) / (2m))` with `m = 1/(1/n0 + 1/n1)` and `δ′ = δ/width`.
    pub fn cut_threshold(delta: f64, n0: usize, n1: usize, width: usize) -> f64 {
        let m = 1.0 / (1.0 / n0 as f64 + 1.0 / n1 as f64);
        let delta_prime = delta / width as f64;
        ((4.0 / delta_prime).ln() / (2.0 * m)).sqrt()
    }

    fn oldest_first(&self) -> impl Iterator<Item = &HistBucket> {
        self.rows.iter().rev().flat_map(|row| row.iter().rev())
    }

    fn insert(&mut self, x: f64) {
        if self.width > 0 {
            let d = x - self.mean();
            self.m2 += d * d * self.width as f64 / (self.width + 1) as f64;
        }
        self.width += 1;
        self.total += x;
        if self.rows.is_empty() {
            self.rows.push(VecDeque::new());
        }
        self.rows[0].push_front(HistBucket::single(x));
        let mut r = 0;
        while self.rows[r].len() > self.max_buckets {
            let older = self.rows[r].pop_back().unwrap();
            let newer = self.rows[r].pop_back().unwrap();
            if r + 1 == self.rows.len() {
                self.rows.push(VecDeque::new());
            }
            self.rows[r + 1].push_front(HistBucket::merge(older, newer));
            r += 1;
        }
    }

    fn drop_oldest(&mut self) -> usize {
        let row = self.rows.iter().rposition(|r| !r.is_empty()).expect("non-empty window");
        let b = self.rows[row].pop_back().unwrap();
        while self.rows.last().is_some_and(VecDeque::is_empty) {
            self.rows.pop();
        }
        let rest = self.width - b.count;
        if rest == 0 {
            self.m2 = 0.0;
            self.total = 0.0;
        } else {
            let rest_sum = self.total - b.sum;
            let d = b.sum / b.count as f64 - rest_sum / rest as f64;
            self.m2 = (self.m2 - b.m2 - d * d * (b.count * rest) as f64 / self.width as f64).max(0.0);
            self.total = rest_sum;
        }
        self.width = rest;
        b.count
    }

    fn has_cut(&self) -> bool {
        let (mut n0, mut s0) = (0usize, 0.0);
        let n = self.width;
        for b in self.oldest_first() {
            n0 += b.count;
            s0 += b.sum;
            let n1 = n - n0;
            if n1 == 0 {
                break;
            }
            let diff = (s0 / n0 as f64 - (self.total - s0) / n1 as f64).abs();
            if diff >= Self::cut_threshold(self.delta, n0, n1, n) {
                return true;
            }
        }
        false
    }

    /// Inserts `x`, then drops the oldest buckets while any split of the
    /// window shows a significant difference in means.
    pub fn update<T: Scalar>(&mut self, x: T) -> Result<AdwinUpdate> {
        let x = x.as_f64();
        if !x.is_finite() {
            return Err(Error::NonFinite("ADWIN input"));
        }
        self.insert(x);
        let mut dropped = 0;
        while self.width > 1 && self.has_cut() {
            dropped += self.drop_oldest();
        }
        let drift = dropped > 0;
        if drift {
            self.detections += 1;
        }
        Ok(AdwinUpdate { drift, dropped })
    }
}
