//! Acceptance criteria, one line each. Runs without the libtest harness so
//! every verdict is printed; the process fails if any criterion fails.

use std::collections::VecDeque;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use ipdd_cli::commands::{cmd_compare, Experiment};
use ipdd_cli::config::{Origin, RawConfig};
use ipdd_core::datasets::{gen_sine, DriftSpec, LabeledDataset};
use ipdd_core::ensemble::{build_ensemble, train_subsample_models, EnsembleConfig};
use ipdd_core::metrics::{auc_binary, mcc, ConfusionMatrix};
use ipdd_core::nn::{example_gradient, forward, ModelParams};
use ipdd_core::rng::rng_from;
use ipdd_core::stream::{run_baseline, run_ipdd, Method, StreamConfig};
use ipdd_core::theory::{
    bound_all_recurrence, bound_k_anonymity, bound_pair_recurrence, delta_sweep, monte_carlo_recurrence,
    BoundInputs, RecurrenceConfig,
};
use ipdd_core::{predictive_entropy, Adwin, Architecture, Dataset, TrainConfig};
use rand::Rng as _;
use rand_distr::StandardNormal;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- oracles

/// Cross-entropy through the forward pass only.
fn loss(model: &ModelParams<f64>, x: &[f64], label: usize) -> f64 {
    -forward(model, x).unwrap()[label].ln()
}

/// Exact-window ADWIN: keeps every element and tests every split.
struct WindowOracle {
    delta: f64,
    window: VecDeque<f64>,
}

impl WindowOracle {
    fn new(delta: f64) -> Self {
        Self {
            delta,
            window: VecDeque::new(),
        }
    }

    fn significant(&self) -> bool {
        let n = self.window.len();
        let total: f64 = self.window.iter().sum();
        let mut head = 0.0;
        for (i, v) in self.window.iter().enumerate().take(n.saturating_sub(1)) {
            head += v;
            let (n0, n1) = ((i + 1) as f64, (n - i - 1) as f64);
            let m = 1.0 / (1.0 / n0 + 1.0 / n1);
            let eps = ((4.0 * n as f64 / self.delta).ln() / (2.0 * m)).sqrt();
            if (head / n0 - (total - head) / n1).abs() >= eps {
                return true;
            }
        }
        false
    }

    fn push(&mut self, x: f64) -> bool {
        self.window.push_back(x);
        let mut fired = false;
        while self.significant() {
            self.window.pop_front();
            fired = true;
        }
        fired
    }
}

/// Per-neuron maximum L2 distance over incoming weights and bias.
fn neuron_distance(a: &ModelParams<f64>, b: &ModelParams<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for (la, lb) in a.layers().iter().zip(b.layers()) {
        for j in 0..la.fan_out {
            let mut sq = (la.bias[j] - lb.bias[j]).powi(2);
            for i in 0..la.fan_in {
                sq += (la.weights[j * la.fan_in + i] - lb.weights[j * lb.fan_in + i]).powi(2);
            }
            worst = worst.max(sq.sqrt());
        }
    }
    worst
}

fn closed_form_mcc(tp: f64, tn: f64, fp: f64, fn_: f64) -> f64 {
    let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    if den == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / den
    }
}

fn pair_count_auc(positive: &[bool], scores: &[f64]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &pi) in positive.iter().enumerate() {
        for (j, &pj) in positive.iter().enumerate() {
            if pi && !pj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// One-sided sign test: P(X ≥ wins) for X ~ Bin(wins + losses, 1/2).
fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let mut c = 1.0;
    let mut tail = 0.0;
    for i in 0..=n {
        if i >= wins {
            tail += c;
        }
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    tail / 2f64.powi(n as i32)
}

fn blobs(n: usize, seed: u64) -> Dataset {
    let mut rng = rng_from(seed);
    let mut f = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        let centre = if c == 0 { -1.0 } else { 1.0 };
        for _ in 0..2 {
            let z: f64 = rng.sample(StandardNormal);
            f.push(centre + 0.5 * z);
        }
        y.push(c);
    }
    LabeledDataset::new(f, 2, y, 2).unwrap()
}

fn reversal_stream(seed: u64) -> Dataset {
    gen_sine(20_000, &DriftSpec::abrupt(vec![10_000]), seed).unwrap()
}

fn stream_config(seed: u64) -> StreamConfig {
    StreamConfig::new(EnsembleConfig {
        seed,
        ..EnsembleConfig::new(Architecture::ann(4, 2).unwrap())
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------- criteria

fn gradient_correctness() -> Verdict {
    let mut rng = rng_from(101);
    let caps = [10, 20, 10];
    let mut worst: f64 = 0.0;
    for t in 0..50u64 {
        let input = rng.random_range(1..=8);
        let depth = rng.random_range(0..=3);
        let hidden: Vec<usize> = caps[..depth].iter().map(|&c| rng.random_range(1..=c)).collect();
        let classes = rng.random_range(2..=4);
        let arch = Architecture::new(input, hidden, classes).unwrap();
        // nonzero biases keep every pre-activation off the ReLU kink
        let flat: Vec<f64> = (0..arch.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let model = ModelParams::from_flat(&arch, &flat, t).unwrap();
        let x: Vec<f64> = (0..input).map(|_| rng.random_range(-1.0..1.0)).collect();
        let label = rng.random_range(0..classes);
        let (_, analytic) = example_gradient(&model, &x, label).unwrap();
        let h = 1e-5;
        let numeric: Vec<f64> = (0..flat.len())
            .map(|i| {
                let mut up = flat.clone();
                let mut down = flat.clone();
                up[i] += h;
                down[i] -= h;
                let lu = loss(&ModelParams::from_flat(&arch, &up, 0).unwrap(), &x, label);
                let ld = loss(&ModelParams::from_flat(&arch, &down, 0).unwrap(), &x, label);
                (lu - ld) / (2.0 * h)
            })
            .collect();
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        worst = worst.max(if scale > 0.0 { diff / scale } else { diff });
    }
    verdict(worst <= 1e-4, format!("max relative error {worst:.2e} over 50 triples"))
}

fn adwin_equivalence() -> Verdict {
    let mut rng = rng_from(202);
    let mut mismatches = Vec::new();
    let mut gaps = Vec::new();
    for s in 0..100usize {
        let len = rng.random_range(500..=2_000);
        let delta = if s % 4 < 2 { 0.01 } else { 0.001 };
        let shifted = s % 2 == 1;
        let change = rng.random_range(len / 4..3 * len / 4);
        let bernoulli = s % 3 == 0;
        let (p0, jump): (f64, f64) = (rng.random_range(0.1..0.3), rng.random_range(0.3..0.8));
        let mut fast = Adwin::new(delta).unwrap();
        let mut exact = WindowOracle::new(delta);
        let (mut first_fast, mut first_exact): (Option<usize>, Option<usize>) = (None, None);
        for t in 0..len {
            let after = shifted && t >= change;
            let x = if bernoulli {
                // a 0.6 step is ≥ 1σ for any p0 in 0.1..0.3
                let p = if after { p0 + 0.6 } else { p0 };
                (rng.random::<f64>() < p) as u8 as f64
            } else {
                rng.random::<f64>() + if after { jump } else { 0.0 }
            };
            if fast.update(x).unwrap().drift && first_fast.is_none() {
                first_fast = Some(t);
            }
            if exact.push(x) && first_exact.is_none() {
                first_exact = Some(t);
            }
        }
        let ok = match (first_fast, first_exact) {
            (Some(a), Some(b)) => {
                gaps.push(a.abs_diff(b));
                a.abs_diff(b) <= 32
            }
            (None, None) => true,
            (a, b) => a.or(b).unwrap() + 32 >= len,
        };
        if !ok {
            mismatches.push((s, first_fast, first_exact));
        }
    }

    let mut alarms = 0;
    for seed in 0..20u64 {
        let mut rng = rng_from(9_000 + seed);
        let mut a = Adwin::new(0.001).unwrap();
        for _ in 0..10_000 {
            alarms += a.update(rng.random::<f64>()).unwrap().drift as usize;
        }
    }
    let max_gap = gaps.iter().max().copied().unwrap_or(0);
    verdict(
        mismatches.is_empty() && alarms <= 5,
        format!(
            "{} of 100 sequences disagree beyond 32 ({mismatches:?}), max first-detection gap {max_gap}; {alarms} false alarms on 20×10k stationary",
            mismatches.len()
        ),
    )
}

fn entropy_exactness() -> Verdict {
    let ln2: f64 = predictive_entropy(&[vec![0.5, 0.5]]).unwrap();
    let zero: f64 = predictive_entropy(&[vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
    let mixed: f64 = predictive_entropy(&[vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap();
    let ok = (ln2 - std::f64::consts::LN_2).abs() <= 1e-6 && zero.abs() <= 1e-6 && (mixed - 0.610864).abs() <= 1e-6;
    verdict(ok, format!("uniform {ln2:.6}, unanimous {zero:.6}, mixed {mixed:.6}"))
}

fn ensemble_invariants() -> Verdict {
    let mut problems = Vec::new();
    let mut top = Vec::new();
    for seed in 0..20u64 {
        let pool: Dataset = gen_sine(10_000, &DriftSpec::none(), 500 + seed).unwrap();
        let cfg = EnsembleConfig {
            subsample_count: 20,
            delta: 0.01,
            seed,
            ..EnsembleConfig::new(Architecture::ann(4, 2).unwrap())
        };
        let build = build_ensemble(&pool, &cfg).unwrap();
        let mut seen = vec![false; pool.len()];
        for s in &build.subsamples.subsamples {
            for &i in s {
                if std::mem::replace(&mut seen[i], true) {
                    problems.push(format!("seed {seed}: record {i} in two subsamples"));
                }
            }
        }
        for b in &build.buckets {
            if b.members.iter().any(|m| neuron_distance(&b.representative, m) > 0.01) {
                problems.push(format!("seed {seed}: bucket member outside Δ"));
            }
        }
        for (member, b) in build.ensemble.members.iter().zip(&build.buckets) {
            if neuron_distance(&b.representative, member) > 0.01 * (1.0 + 1e-12) {
                problems.push(format!("seed {seed}: ensemble member outside Δ"));
            }
        }
        top.push(build.buckets[0].k());
    }
    verdict(
        problems.is_empty(),
        format!("20 builds, largest bucket sizes {top:?}; problems {problems:?}"),
    )
}

fn drift_recovery() -> Verdict {
    // 2000 initial records and 400-record chunks put the reversal at chunk 20
    let reversal_chunk = 20;
    let mut hits = 0;
    let mut ipdd_acc = Vec::new();
    let mut base_acc = Vec::new();
    let mut base_drifts = 0;
    let mut detections = Vec::new();
    for seed in 0..10u64 {
        let ds = reversal_stream(seed);
        let cfg = stream_config(seed);
        let ipdd = run_ipdd(&ds, &cfg).unwrap();
        let base = run_baseline(Method::NoRetrain, &ds, &cfg).unwrap();
        let chunks: Vec<usize> = ipdd.drift_events.iter().map(|e| e.chunk_index).collect();
        hits += chunks.iter().any(|&c| (reversal_chunk..=reversal_chunk + 5).contains(&c)) as usize;
        detections.push(chunks);
        ipdd_acc.push(ipdd.metrics.accuracy);
        base_acc.push(base.metrics.accuracy);
        base_drifts += base.drift_events.len();
    }
    let gain = mean(&ipdd_acc) - mean(&base_acc);
    verdict(
        hits >= 9 && gain >= 0.15 && base_drifts == 0,
        format!(
            "detected within 5 chunks in {hits}/10 seeds (IPDD drift chunks {detections:?}); accuracy IPDD {:.3} vs no_retrain {:.3} (gain {gain:.3}); no_retrain drifts {base_drifts}",
            mean(&ipdd_acc),
            mean(&base_acc)
        ),
    )
}

fn privacy_trend() -> Verdict {
    let (mut ipdd, mut dp1, mut dp01) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..10u64 {
        let ds = reversal_stream(seed);
        let cfg = stream_config(seed);
        ipdd.push(run_ipdd(&ds, &cfg).unwrap().metrics.accuracy);
        dp1.push(run_baseline(Method::Dp(1.0), &ds, &cfg).unwrap().metrics.accuracy);
        dp01.push(run_baseline(Method::Dp(0.1), &ds, &cfg).unwrap().metrics.accuracy);
    }
    let sign = |a: &[f64], b: &[f64]| {
        let wins = a.iter().zip(b).filter(|(x, y)| x > y).count();
        let losses = a.iter().zip(b).filter(|(x, y)| x < y).count();
        (wins, losses, sign_test_p(wins, losses))
    };
    let (w1, l1, p1) = sign(&ipdd, &dp1);
    let (w2, l2, p2) = sign(&dp1, &dp01);
    let ordered = mean(&ipdd) >= mean(&dp1) && mean(&dp1) >= mean(&dp01);
    verdict(
        ordered && p1 <= 0.05 && p2 <= 0.05,
        format!(
            "mean accuracy IPDD {:.3}, DP(1.0) {:.3}, DP(0.1) {:.3}; sign test IPDD>DP(1.0) {w1}-{l1} p={p1:.3}, DP(1.0)>DP(0.1) {w2}-{l2} p={p2:.3}",
            mean(&ipdd),
            mean(&dp1),
            mean(&dp01)
        ),
    )
}

fn recurrence_bounds() -> Verdict {
    let unit = |q: f64, m: usize, t: usize, k: usize| BoundInputs {
        m,
        b: 1,
        t,
        delta: 1.0,
        sigma2: q,
        k,
    };
    let a = bound_pair_recurrence(&unit(0.5, 2, 1, 2)).unwrap();
    let b = bound_all_recurrence(&unit(0.1, 5, 3, 5)).unwrap();
    let c = bound_k_anonymity(&unit(0.5, 4, 1, 3)).unwrap();
    let exact = (a - 0.25).abs() <= 1e-12 && (b - 0.9f64.powi(15)).abs() <= 1e-12 && (c - 0.3125).abs() <= 1e-12;

    let pool = blobs(2_000, 7);
    let mut informative = 0;
    let mut dominated = 0;
    let mut configs = 0;
    let mut rows = Vec::new();
    for epochs in [1, 5] {
        for m in [5, 10] {
            for delta in [0.05, 0.1, 0.2, 0.5, 1.0] {
                let est = monte_carlo_recurrence(
                    &pool,
                    &RecurrenceConfig {
                        arch: Architecture::new(2, vec![3], 2).unwrap(),
                        m,
                        subsample_size: 100,
                        delta,
                        k: 2,
                        train: TrainConfig {
                            epochs,
                            batch_size: 10,
                            learning_rate: 0.1,
                            shuffle_seed: 0,
                        },
                        trials: 30,
                        seed: 11,
                    },
                )
                .unwrap();
                informative += (est.bound > 0.0) as usize;
                let se = (est.bound * (1.0 - est.bound) / est.trials as f64).sqrt();
                dominated += (est.recur_freq >= est.bound - 2.0 * se) as usize;
                configs += 1;
                rows.push(format!("{delta}/{m}/{epochs}:{:.2}≥{:.2}", est.recur_freq, est.bound));
            }
        }
    }
    let share = dominated as f64 / configs as f64;
    verdict(
        exact && share >= 0.95,
        format!(
            "examples {a} {b:.6} {c}; frequency dominates bound in {dominated}/{configs} configs, {informative} with positive bound ({})",
            rows.join(" ")
        ),
    )
}

fn kanonymity_sweeps() -> Verdict {
    let deltas = [1e-4, 1e-3, 1e-2, 1e-1];
    let mut delta_ok = true;
    let mut sweeps = Vec::new();
    for seed in 0..10u64 {
        let pool: Dataset = gen_sine(10_000, &DriftSpec::none(), 700 + seed).unwrap();
        let cfg = EnsembleConfig {
            subsample_count: 20,
            seed,
            ..EnsembleConfig::new(Architecture::ann(4, 2).unwrap())
        };
        let (_, models) = train_subsample_models(&pool, &cfg).unwrap();
        let ks = delta_sweep(&models, &deltas).unwrap();
        delta_ok &= ks.windows(2).all(|w| w[0] <= w[1]);
        sweeps.push(ks);
    }

    let ms = [20, 50, 100];
    let mut means = Vec::new();
    for &m in &ms {
        let mut sizes = Vec::new();
        for seed in 0..10u64 {
            let pool: Dataset = gen_sine(10_000, &DriftSpec::none(), 800 + seed).unwrap();
            let cfg = EnsembleConfig {
                subsample_count: m,
                subsample_size: Some(100),
                seed,
                ..EnsembleConfig::new(Architecture::ann(4, 2).unwrap())
            };
            let (_, models) = train_subsample_models(&pool, &cfg).unwrap();
            sizes.push(delta_sweep(&models, &[0.01]).unwrap()[0] as f64);
        }
        means.push(mean(&sizes));
    }
    let m_ok = means.windows(2).all(|w| w[0] <= w[1]);
    verdict(
        delta_ok && m_ok,
        format!("Δ sweeps {sweeps:?}; mean max bucket for m={ms:?}: {means:?}"),
    )
}

fn metrics_oracles() -> Verdict {
    let mut rng = rng_from(909);
    let mut mcc_err: f64 = 0.0;
    for _ in 0..1_000 {
        let c: [u64; 4] = std::array::from_fn(|_| rng.random_range(0..60));
        let got = mcc(&ConfusionMatrix::binary(c[0], c[1], c[2], c[3]));
        let want = closed_form_mcc(c[0] as f64, c[1] as f64, c[2] as f64, c[3] as f64);
        mcc_err = mcc_err.max((got - want).abs());
    }
    let mut auc_mismatch = 0;
    let mut tested = 0;
    while tested < 1_000 {
        let n = rng.random_range(2..=50);
        let positive: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        if positive.iter().all(|&p| p) || positive.iter().all(|&p| !p) {
            continue;
        }
        // coarse grid so ties occur
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..20) as f64 / 20.0).collect();
        auc_mismatch += (auc_binary(&positive, &scores).unwrap() != pair_count_auc(&positive, &scores)) as usize;
        tested += 1;
    }
    verdict(
        mcc_err <= 1e-12 && auc_mismatch == 0,
        format!("max MCC deviation {mcc_err:.1e} on 1000 matrices; {auc_mismatch} AUC mismatches on 1000 vectors"),
    )
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut raw = RawConfig::default();
    for (k, v) in [
        ("dataset.n", "3000"),
        ("train.epochs", "5"),
        ("m", "10"),
        ("k", "3"),
        ("methods", "ipdd,adwin_lim,dp,no_retrain,adwin_unlim"),
        ("seeds", "1,2"),
    ] {
        raw.set(k, v, Origin::Override).unwrap();
    }
    let cfg = raw.resolve().unwrap();
    let experiment = |name: &str| Experiment {
        raw: raw.clone(),
        cfg: cfg.clone(),
        out: dir.path().join(name),
        svg: false,
    };
    cmd_compare(&experiment("first")).unwrap();
    cmd_compare(&experiment("second")).unwrap();
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| cmd_compare(&experiment("serial")))
        .unwrap();
    let files = ["compare.csv", "chunks.csv", "drifts.csv", "summary.json"];
    let mut differing = Vec::new();
    for f in files {
        let a = std::fs::read(dir.path().join("first").join(f)).unwrap();
        for other in ["second", "serial"] {
            if a != std::fs::read(dir.path().join(other).join(f)).unwrap() {
                differing.push(format!("{other}/{f}"));
            }
        }
    }
    verdict(
        differing.is_empty(),
        format!("repeat and single-thread runs vs first run, differing files: {differing:?}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("gradient correctness", gradient_correctness),
        ("ADWIN oracle equivalence", adwin_equivalence),
        ("entropy exactness", entropy_exactness),
        ("ensemble construction invariants", ensemble_invariants),
        ("end-to-end drift recovery", drift_recovery),
        ("privacy/accuracy trend", privacy_trend),
        ("recurrence bounds", recurrence_bounds),
        ("k-anonymity sweeps", kanonymity_sweeps),
        ("metric oracles", metrics_oracles),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        failed += !v.pass as usize;
        println!(
            "criterion {:>2} {:<34} {}  [{:.1}s] {}",
            i + 1,
            name,
            if v.pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64(),
            v.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
