use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ipdd_core::datasets::{gen_sine, load_csv, write_csv};
use ipdd_core::ensemble::train_subsample_models;
use ipdd_core::stream::run_method;
use ipdd_core::theory::{delta_sweep, monte_carlo_recurrence, RecurrenceConfig};
use ipdd_core::{Dataset, Method, RunResult};
use rayon::prelude::*;

use crate::config::{ArchSpec, DatasetSpec, ExperimentConfig, RawConfig};
use crate::report::*;
use crate::CliError;

/// Everything a verb needs: the raw assignments (for hashing) and their typed view.
pub struct Experiment {
    pub raw: RawConfig,
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub svg: bool,
}

pub struct RunRecord {
    pub seed: u64,
    pub arch: ArchSpec,
    pub result: RunResult,
}

impl RunRecord {
    fn labels(&self) -> (u64, String, String) {
        (self.seed, self.arch.to_string(), self.result.method.to_string())
    }
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub fn load_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset, CliError> {
    match spec {
        DatasetSpec::Sine { n, drift, seed: fixed } => Ok(gen_sine(*n, drift, fixed.unwrap_or(seed))?),
        DatasetSpec::Csv { path, schema } => Ok(load_csv(path, schema)?),
    }
}

/// Runs every (seed, architecture, method) combination in parallel; results
/// come back in that nested order regardless of scheduling.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>, CliError> {
    let datasets = cfg
        .seeds
        .par_iter()
        .map(|&s| load_dataset(&cfg.dataset, s))
        .collect::<Result<Vec<_>, _>>()?;
    let mut jobs = Vec::new();
    for (si, &seed) in cfg.seeds.iter().enumerate() {
        for arch in &cfg.archs {
            for &method in &cfg.methods {
                jobs.push((si, seed, arch.clone(), method));
            }
        }
    }
    jobs.into_par_iter()
        .map(|(si, seed, arch, method): (usize, u64, ArchSpec, Method)| {
            let ds = &datasets[si];
            let built = arch.build(ds.dim(), ds.num_classes)?;
            let result = run_method(method, ds, &cfg.stream.stream(built, seed))
                .map_err(|e| CliError::runtime(format!("seed {seed}, {arch}, {method}: {e}")))?;
            Ok(RunRecord { seed, arch, result })
        })
        .collect()
}

fn summarize(hash: &str, records: &[RunRecord]) -> Summary {
    Summary {
        config_hash: hash.to_string(),
        runs: records
            .iter()
            .map(|r| {
                let (seed, arch, method) = r.labels();
                let m = &r.result.metrics;
                RunSummary {
                    seed,
                    arch,
                    method,
                    accuracy: m.accuracy,
                    mcc: m.mcc,
                    auc: m.auc,
                    drift_count: m.drift_count,
                    label_requests: r.result.label_requests,
                    retrain_count: r.result.retrain_count,
                    final_ensemble_size: r.result.ensemble_sizes.last().copied().unwrap_or(0),
                }
            })
            .collect(),
    }
}

const CHUNK_HEADER: &[&str] = &["seed", "arch", "method", "chunk_index", "size", "accuracy", "mcc", "auc", "drift"];
const DRIFT_HEADER: &[&str] = &[
    "seed",
    "arch",
    "method",
    "chunk_index",
    "instance_index",
    "detector_width_before",
    "labels_requested",
];

fn write_run_files(exp: &Experiment, records: &[RunRecord], outputs: &mut Vec<String>) -> Result<(), CliError> {
    let mut chunks = Vec::new();
    let mut drifts = Vec::new();
    for r in records {
        let (seed, arch, method) = r.labels();
        for c in &r.result.metrics.per_chunk {
            chunks.push(ChunkRow {
                seed,
                arch: arch.clone(),
                method: method.clone(),
                chunk_index: c.chunk_index,
                size: c.size,
                accuracy: c.accuracy,
                mcc: c.mcc,
                auc: c.auc,
                drift: c.drift,
            });
        }
        for e in &r.result.drift_events {
            drifts.push(DriftRow {
                seed,
                arch: arch.clone(),
                method: method.clone(),
                chunk_index: e.chunk_index,
                instance_index: e.instance_index,
                detector_width_before: e.detector_width_before,
                labels_requested: e.labels_requested,
            });
        }
    }
    write_rows_with_header(&exp.out.join("chunks.csv"), CHUNK_HEADER, &chunks)?;
    write_rows_with_header(&exp.out.join("drifts.csv"), DRIFT_HEADER, &drifts)?;
    write_json(&exp.out.join("summary.json"), &summarize(&exp.raw.hash(), records))?;
    outputs.extend(["chunks.csv", "drifts.csv", "summary.json"].map(String::from));

    if exp.svg {
        for r in records {
            let (seed, arch, method) = r.labels();
            let stem = format!("{method}_{arch}_seed{seed}").replace(['(', ')'], "");
            let acc: Vec<(f64, f64)> = r
                .result
                .metrics
                .per_chunk
                .iter()
                .map(|c| (c.chunk_index as f64, c.accuracy))
                .collect();
            let marks: Vec<f64> = r.result.drift_events.iter().map(|e| e.chunk_index as f64).collect();
            let name = format!("{stem}_accuracy.svg");
            write_text(&exp.out.join(&name), &line_chart(&format!("accuracy per chunk: {method} {arch} seed {seed}"), &acc, &marks))?;
            outputs.push(name);
            if !r.result.signal.is_empty() {
                let sig: Vec<(f64, f64)> = r.result.signal.iter().map(|&(i, v)| (i as f64, v)).collect();
                let marks: Vec<f64> = r.result.drift_events.iter().map(|e| e.instance_index as f64).collect();
                let name = format!("{stem}_signal.svg");
                write_text(&exp.out.join(&name), &line_chart(&format!("detector input: {method} {arch} seed {seed}"), &sig, &marks))?;
                outputs.push(name);
            }
        }
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn write_manifest(exp: &Experiment, started: u128, records: &[RunRecord], mut outputs: Vec<String>) -> Result<(), CliError> {
    outputs.push("manifest.json".into());
    let manifest = Manifest {
        config_hash: exp.raw.hash(),
        seeds: exp.cfg.seeds.clone(),
        versions: Versions {
            ipdd_cli: env!("CARGO_PKG_VERSION").into(),
            ipdd_core: ipdd_core::VERSION.into(),
        },
        outputs,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        wall_time_ms: records
            .iter()
            .map(|r| {
                let (seed, arch, method) = r.labels();
                RunTiming {
                    seed,
                    arch,
                    method,
                    ms: r.result.wall_time.as_millis(),
                }
            })
            .collect(),
    };
    write_json(&exp.out.join("manifest.json"), &manifest)
}

fn prepare_out(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::runtime(format!("{}: {e}", out.display())))
}

pub fn cmd_run(exp: &Experiment) -> Result<Vec<RunRecord>, CliError> {
    prepare_out(&exp.out)?;
    let started = now_ms();
    let records = run_all(&exp.cfg)?;
    let mut outputs = Vec::new();
    write_run_files(exp, &records, &mut outputs)?;
    write_manifest(exp, started, &records, outputs)?;
    Ok(records)
}

/// Seed-averaged table, one row per (method, architecture).
pub fn compare_rows(cfg: &ExperimentConfig, records: &[RunRecord]) -> Vec<CompareRow> {
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        for arch in &cfg.archs {
            let runs: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.result.method == method && &r.arch == arch)
                .collect();
            let n = runs.len() as f64;
            let mean = |f: &dyn Fn(&RunRecord) -> f64| runs.iter().map(|r| f(r)).sum::<f64>() / n;
            let auc = runs
                .iter()
                .map(|r| r.result.metrics.auc)
                .collect::<Option<Vec<f64>>>()
                .map(|v| v.iter().sum::<f64>() / n);
            rows.push(CompareRow {
                method: method.to_string(),
                arch: arch.to_string(),
                seeds: runs.len(),
                accuracy: mean(&|r| r.result.metrics.accuracy),
                mcc: mean(&|r| r.result.metrics.mcc),
                auc,
                drift_count: mean(&|r| r.result.metrics.drift_count as f64),
                label_requests: mean(&|r| r.result.label_requests as f64),
            });
        }
    }
    rows
}

pub fn cmd_compare(exp: &Experiment) -> Result<Vec<CompareRow>, CliError> {
    if exp.cfg.methods.len() < 2 {
        return Err(CliError::Config(format!(
            "compare needs at least two methods, got {}",
            exp.cfg.methods.len()
        )));
    }
    prepare_out(&exp.out)?;
    let started = now_ms();
    let records = run_all(&exp.cfg)?;
    let rows = compare_rows(&exp.cfg, &records);
    let mut outputs = Vec::new();
    write_rows(&exp.out.join("compare.csv"), &rows)?;
    outputs.push("compare.csv".into());
    write_run_files(exp, &records, &mut outputs)?;
    write_manifest(exp, started, &records, outputs)?;
    Ok(rows)
}

/// For every architecture, m and initialization count: the largest bucket of a
/// fixed model set re-bucketed at each Δ, next to the Monte Carlo recurrence
/// frequency and the clamped bound at that Δ. Uses the first seed.
pub fn cmd_theory(exp: &Experiment) -> Result<Vec<TheoryRow>, CliError> {
    prepare_out(&exp.out)?;
    let started = now_ms();
    let cfg = &exp.cfg;
    let th = &cfg.theory;
    let seed = cfg.seeds[0];
    let pool = load_dataset(&cfg.dataset, seed)?;
    let mut rows = Vec::new();
    for arch in &cfg.archs {
        let built = arch.build(pool.dim(), pool.num_classes)?;
        for &m in &th.ms {
            if m * th.subsample_size > pool.len() {
                return Err(CliError::Config(format!(
                    "theory needs m·theory.n = {} records but the dataset has {}",
                    m * th.subsample_size,
                    pool.len()
                )));
            }
            let estimates = th
                .deltas
                .iter()
                .map(|&delta| {
                    monte_carlo_recurrence(
                        &pool,
                        &RecurrenceConfig {
                            arch: built.clone(),
                            m,
                            subsample_size: th.subsample_size,
                            delta,
                            k: cfg.stream.k.clamp(2, m),
                            train: cfg.stream.train.clone(),
                            trials: th.trials,
                            seed,
                        },
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            for &init_count in &th.init_counts {
                let mut ens = cfg.stream.ensemble(built.clone(), seed);
                ens.subsample_count = m;
                ens.subsample_size = Some(th.subsample_size);
                ens.init_count = init_count;
                let (_, models) = train_subsample_models(&pool, &ens)?;
                let ks = delta_sweep(&models, &th.deltas)?;
                for ((&delta, k), est) in th.deltas.iter().zip(ks).zip(&estimates) {
                    rows.push(TheoryRow {
                        delta,
                        m,
                        init_count,
                        k_anonymity: k,
                        bound: est.bound,
                        recur_freq: est.recur_freq,
                        trials: est.trials,
                    });
                }
            }
        }
    }
    write_rows_with_header(
        &exp.out.join("theory.csv"),
        &["delta", "m", "init_count", "k_anonymity", "bound", "recur_freq", "trials"],
        &rows,
    )?;
    write_manifest(exp, started, &[], vec!["theory.csv".into()])?;
    Ok(rows)
}

/// Exports the configured dataset for the first seed.
pub fn cmd_gen(exp: &Experiment) -> Result<Dataset, CliError> {
    prepare_out(&exp.out)?;
    let started = now_ms();
    let ds = load_dataset(&exp.cfg.dataset, exp.cfg.seeds[0])?;
    write_csv(&ds, exp.out.join("dataset.csv"))?;
    write_manifest(exp, started, &[], vec!["dataset.csv".into()])?;
    Ok(ds)
}
