//! Closed-form recurrence lower bounds and their Monte Carlo counterparts.
//!
//! With `q = σ²/(bΔ²)` clamped to `[0, 1]` and `p = 1 − q`, the probability
//! that at least `k` of `m` independently trained models stay within the
//! shared ball after `T` epochs is bounded below by
//! `(Σ_{r=k}^{m} C(m,r) p^r q^{m−r})^T`.

use rayon::prelude::*;

use crate::datasets::LabeledDataset;
use crate::ensemble::{bucket_indices, generate_subsamples};
use crate::error::{Error, Result};
use crate::nn::{example_gradient, init_model, train, Architecture, ModelParams, TrainConfig};
use crate::rng::{derive_path, tags};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub m: usize,
    /// Minibatches per epoch.
    pub b: usize,
    /// Epochs.
    pub t: usize,
    pub delta: f64,
    /// Trace of the per-example gradient covariance.
    pub sigma2: f64,
    pub k: usize,
}

impl BoundInputs {
    fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidParameter(format!("need m ≥ 2 models, got {}", self.m)));
        }
        if self.b == 0 {
            return Err(Error::InvalidParameter("need at least one minibatch per epoch".into()));
        }
        if !(self.delta > 0.0) || !(self.sigma2 >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need Δ > 0 and σ² ≥ 0, got Δ={} σ²={}",
                self.delta, self.sigma2
            )));
        }
        Ok(())
    }

    /// `σ²/(bΔ²)` before clamping.
    pub fn raw_q(&self) -> f64 {
        self.sigma2 / (self.b as f64 * self.delta * self.delta)
    }

    pub fn q(&self) -> f64 {
        self.raw_q().clamp(0.0, 1.0)
    }

    /// The Markov step gives no information once `σ² ≥ bΔ²`.
    pub fn is_vacuous(&self) -> bool {
        self.raw_q() >= 1.0
    }
}

fn binomial(n: usize, r: usize) -> f64 {
    let r = r.min(n - r);
    (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn tail(inp: &BoundInputs, k: usize) -> f64 {
    let q = inp.q();
    let p = 1.0 - q;
    let per_epoch: f64 = (k..=inp.m)
        .map(|r| binomial(inp.m, r) * p.powi(r as i32) * q.powi((inp.m - r) as i32))
        .sum();
    per_epoch.clamp(0.0, 1.0).powi(inp.t as i32)
}

/// Probability bound that at least two models recur.
pub fn bound_pair_recurrence(inp: &BoundInputs) -> Result<f64> {
    inp.validate()?;
    Ok(tail(inp, 2))
}

/// Probability bound that all `m` models recur.
pub fn bound_all_recurrence(inp: &BoundInputs) -> Result<f64> {
    inp.validate()?;
    Ok((1.0 - inp.q()).powi(inp.m as i32).powi(inp.t as i32))
}

/// Probability bound for k-anonymous integral privacy.
pub fn bound_k_anonymity(inp: &BoundInputs) -> Result<f64> {
    inp.validate()?;
    if inp.k < 2 || inp.k > inp.m {
        return Err(Error::InvalidParameter(format!("k must lie in [2, {}], got {}", inp.m, inp.k)));
    }
    Ok(tail(inp, inp.k))
}

/// Trace of the empirical covariance (divisor `n`) of a set of vectors.
pub fn gradient_covariance_trace<T: Scalar>(grads: &[Vec<T>]) -> Result<f64> {
    let n = grads.len();
    if n == 0 {
        return Err(Error::Empty("gradients"));
    }
    let d = grads[0].len();
    let mut mean = vec![0.0; d];
    for g in grads {
        if g.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: g.len() });
        }
        for (m, v) in mean.iter_mut().zip(g) {
            *m += v.as_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let ss: f64 = grads
        .iter()
        .map(|g| g.iter().zip(&mean).map(|(v, m)| (v.as_f64() - m).powi(2)).sum::<f64>())
        .sum();
    Ok(ss / n as f64)
}

/// Per-example gradient variance σ² at fixed parameters.
pub fn estimate_sigma2<T: Scalar>(data: &LabeledDataset<T>, model: &ModelParams<T>, batch_size: usize) -> Result<f64> {
    let needed = 2 * batch_size.max(1);
    if data.len() < needed {
        return Err(Error::InsufficientData {
            needed,
            available: data.len(),
        });
    }
    let grads = (0..data.len())
        .map(|i| example_gradient(model, data.row(i), data.labels[i]).map(|(_, g)| g))
        .collect::<Result<Vec<_>>>()?;
    gradient_covariance_trace(&grads)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrenceConfig {
    pub arch: Architecture,
    pub m: usize,
    /// Records per subsample, `N`.
    pub subsample_size: usize,
    pub delta: f64,
    /// Anonymity target reported alongside the pair event.
    pub k: usize,
    pub train: TrainConfig,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrenceEstimate {
    pub trials: usize,
    /// Fraction of trials whose largest bucket holds at least two models.
    pub recur_freq: f64,
    /// Fraction of trials whose largest bucket holds at least `k` models.
    pub k_freq: f64,
    /// Clamped pair bound.
    pub bound: f64,
    pub bound_k: f64,
    pub sigma2: f64,
    pub vacuous: bool,
    pub max_bucket_sizes: Vec<usize>,
}

impl RecurrenceEstimate {
    /// Binomial standard error of `recur_freq`.
    pub fn standard_error(&self) -> f64 {
        (self.recur_freq * (1.0 - self.recur_freq) / self.trials as f64).sqrt()
    }
}

/// Repeats subsample-train-bucket with a shared initialization and fresh
/// disjoint subsamples per trial, and pairs the observed frequency with the
/// bound evaluated from σ² at the initialization.
pub fn monte_carlo_recurrence<T: Scalar>(pool: &LabeledDataset<T>, cfg: &RecurrenceConfig) -> Result<RecurrenceEstimate> {
    if cfg.m < 2 {
        return Err(Error::InvalidParameter(format!("pair recurrence needs m ≥ 2, got {}", cfg.m)));
    }
    if cfg.trials == 0 {
        return Err(Error::InvalidParameter("trials must be positive".into()));
    }
    let n = cfg.subsample_size;
    let train_cfg = TrainConfig {
        batch_size: cfg.train.batch_size.min(n),
        ..cfg.train.clone()
    };
    let init: ModelParams<T> = init_model(&cfg.arch, cfg.seed);
    let sigma2 = estimate_sigma2(pool, &init, train_cfg.batch_size)?;
    let inputs = BoundInputs {
        m: cfg.m,
        b: train_cfg.batches_per_epoch(n),
        t: train_cfg.epochs,
        delta: cfg.delta,
        sigma2,
        k: cfg.k.clamp(2, cfg.m),
    };
    let bound = bound_pair_recurrence(&inputs)?;
    let bound_k = bound_k_anonymity(&inputs)?;

    let max_bucket_sizes = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let trial_seed = derive_path(cfg.seed, &[tags::TRIAL, trial as u64]);
            let subs = generate_subsamples(pool.len(), n, cfg.m, trial_seed)?;
            let models = subs
                .subsamples
                .iter()
                .enumerate()
                .map(|(i, idx)| {
                    let job = train_cfg.with_seed(derive_path(trial_seed, &[tags::MEMBER, i as u64]));
                    train(&init, &pool.select(idx), &job)
                })
                .collect::<Result<Vec<_>>>()?;
            let buckets = bucket_indices(&models, T::of(cfg.delta))?;
            Ok(buckets.iter().map(Vec::len).max().unwrap_or(0))
        })
        .collect::<Result<Vec<usize>>>()?;

    let freq = |min: usize| max_bucket_sizes.iter().filter(|&&s| s >= min).count() as f64 / cfg.trials as f64;
    Ok(RecurrenceEstimate {
        trials: cfg.trials,
        recur_freq: freq(2),
        k_freq: freq(inputs.k),
        bound,
        bound_k,
        sigma2,
        vacuous: inputs.is_vacuous(),
        max_bucket_sizes,
    })
}

/// Largest bucket size of a fixed model set at each Δ.
pub fn delta_sweep<T: Scalar>(models: &[ModelParams<T>], deltas: &[f64]) -> Result<Vec<usize>> {
    deltas
        .iter()
        .map(|&d| Ok(bucket_indices(models, T::of(d))?.iter().map(Vec::len).max().unwrap_or(0)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn inputs(q: f64, m: usize, t: usize, k: usize) -> BoundInputs {
        // b = 1, Δ = 1 so that σ² = q
        BoundInputs { m, b: 1, t, delta: 1.0, sigma2: q, k }
    }

    #[test]
    fn reference_values() {
        assert_abs_diff_eq!(bound_pair_recurrence(&inputs(0.5, 2, 1, 2)).unwrap(), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(bound_pair_recurrence(&inputs(0.5, 3, 2, 2)).unwrap(), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(bound_all_recurrence(&inputs(0.1, 5, 3, 5)).unwrap(), 0.9f64.powi(15), epsilon = 1e-12);
        assert_abs_diff_eq!(bound_all_recurrence(&inputs(0.1, 5, 3, 5)).unwrap(), 0.205891, epsilon = 1e-6);
        assert_abs_diff_eq!(bound_k_anonymity(&inputs(0.5, 4, 1, 3)).unwrap(), 0.3125, epsilon = 1e-12);
    }

    #[test]
    fn limiting_cases() {
        for m in 2..8 {
            assert_eq!(bound_pair_recurrence(&inputs(0.0, m, 4, 2)).unwrap(), 1.0);
        }
        assert_eq!(bound_all_recurrence(&inputs(0.0, 3, 2, 3)).unwrap(), 1.0);
        assert_eq!(bound_all_recurrence(&inputs(1.0, 3, 2, 3)).unwrap(), 0.0);
        let vac = inputs(7.0, 4, 1, 2);
        assert!(vac.is_vacuous());
        assert_eq!(bound_pair_recurrence(&vac).unwrap(), 0.0);
        let inp = inputs(0.3, 6, 2, 6);
        assert_abs_diff_eq!(
            bound_k_anonymity(&inp).unwrap(),
            bound_all_recurrence(&inp).unwrap(),
            epsilon = 1e-15
        );
        let inp = inputs(0.3, 6, 2, 2);
        assert_eq!(bound_k_anonymity(&inp).unwrap(), bound_pair_recurrence(&inp).unwrap());
    }

    #[test]
    fn invalid_inputs() {
        assert!(bound_k_anonymity(&inputs(0.1, 4, 1, 1)).is_err());
        assert!(bound_k_anonymity(&inputs(0.1, 4, 1, 5)).is_err());
        assert!(bound_pair_recurrence(&inputs(0.1, 1, 1, 2)).is_err());
        assert!(bound_pair_recurrence(&BoundInputs { delta: 0.0, ..inputs(0.1, 3, 1, 2) }).is_err());
    }

    #[test]
    fn covariance_trace_cases() {
        assert_abs_diff_eq!(
            gradient_covariance_trace(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_eq!(gradient_covariance_trace(&vec![vec![2.0, 3.0]; 5]).unwrap(), 0.0);
        // rotating every vector by the same angle leaves the trace unchanged
        let pts = [vec![0.3, -1.2], vec![2.0, 0.5], vec![-0.7, 0.9], vec![1.1, 1.1]];
        let (s, c) = 0.83f64.sin_cos();
        let rotated: Vec<Vec<f64>> = pts.iter().map(|v| vec![c * v[0] - s * v[1], s * v[0] + c * v[1]]).collect();
        assert_abs_diff_eq!(
            gradient_covariance_trace(&pts).unwrap(),
            gradient_covariance_trace(&rotated).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn sigma2_needs_two_batches() {
        let arch = Architecture::new(2, vec![3], 2).unwrap();
        let model: ModelParams<f64> = init_model(&arch, 0);
        let ds = LabeledDataset::new(vec![0.5; 2 * 15], 2, vec![1; 15], 2).unwrap();
        assert!(matches!(estimate_sigma2(&ds, &model, 10), Err(Error::InsufficientData { .. })));
        assert_eq!(estimate_sigma2(&ds, &model, 5).unwrap(), 0.0);
    }

    fn blobs(n: usize, seed: u64) -> LabeledDataset<f64> {
        use rand::Rng as _;
        let mut rng = crate::rng::rng_from(seed);
        let mut f = Vec::with_capacity(2 * n);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 2;
            let centre = if c == 0 { 0.25 } else { 0.75 };
            f.push(centre + rng.random_range(-0.15..0.15));
            f.push(centre + rng.random_range(-0.15..0.15));
            y.push(c);
        }
        LabeledDataset::new(f, 2, y, 2).unwrap()
    }

    fn mc_cfg(delta: f64, m: usize) -> RecurrenceConfig {
        RecurrenceConfig {
            arch: Architecture::new(2, vec![3], 2).unwrap(),
            m,
            subsample_size: 50,
            delta,
            k: 3,
            train: TrainConfig {
                epochs: 3,
                batch_size: 10,
                learning_rate: 0.1,
                shuffle_seed: 0,
            },
            trials: 6,
            seed: 2,
        }
    }

    #[test]
    fn monte_carlo_behaviour() {
        let pool = blobs(600, 1);
        let huge = monte_carlo_recurrence(&pool, &mc_cfg(1e6, 4)).unwrap();
        assert_eq!(huge.recur_freq, 1.0);
        assert_eq!(huge.k_freq, 1.0);
        assert!(huge.max_bucket_sizes.iter().all(|&s| s == 4));
        assert!(huge.bound > 0.99);
        let again = monte_carlo_recurrence(&pool, &mc_cfg(1e6, 4)).unwrap();
        assert_eq!(huge, again);
        assert!(monte_carlo_recurrence(&pool, &mc_cfg(0.05, 1)).is_err());
        let tight = monte_carlo_recurrence(&pool, &mc_cfg(1e-9, 4)).unwrap();
        assert_eq!(tight.recur_freq, 0.0);
        assert!(tight.vacuous);
        assert_eq!(tight.bound, 0.0);
    }

    #[test]
    fn delta_sweep_on_fixed_models() {
        let arch = Architecture::new(1, vec![1], 2).unwrap();
        let models: Vec<ModelParams<f64>> = [0.0, 0.05, 0.3, 0.31, 0.315]
            .iter()
            .map(|&w| ModelParams::from_flat(&arch, &[w, 0.0, 0.0, 0.0, 0.0, 0.0], 0).unwrap())
            .collect();
        assert_eq!(delta_sweep(&models, &[1e-4, 0.02, 0.1, 1.0]).unwrap(), vec![1, 3, 3, 5]);
    }

    proptest! {
        #[test]
        fn bounds_are_monotone(
            m in 2usize..12,
            k_off in 0usize..10,
            b in 1usize..20,
            t in 1usize..5,
            delta in 0.01f64..2.0,
            sigma2 in 0.0f64..2.0,
            scale in 1.0f64..3.0,
        ) {
            let k = 2 + k_off % (m - 1);
            let base = BoundInputs { m, b, t, delta, sigma2, k };
            let v = bound_k_anonymity(&base).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            let tol = 1e-12;
            let at = |inp: BoundInputs| bound_k_anonymity(&inp).unwrap();
            if k < m {
                let stricter = at(BoundInputs { k: k + 1, ..base });
                prop_assert!(stricter <= v + tol);
            }
            let wider = at(BoundInputs { delta: delta * scale, ..base });
            let more_batches = at(BoundInputs { b: b + 1, ..base });
            let noisier = at(BoundInputs { sigma2: sigma2 * scale, ..base });
            prop_assert!(wider >= v - tol);
            prop_assert!(more_batches >= v - tol);
            prop_assert!(noisier <= v + tol);
        }
    }
}
