//! Ensembles of Δ-integrally private models.
//!
//! Models are trained on pairwise-disjoint subsamples of a training pool,
//! grouped into buckets of models that lie within Δ of the bucket's first
//! model, and the means of the largest buckets form the released ensemble.
//! The size of a bucket is the number of disjoint datasets that produce that
//! model, i.e. its k-anonymity.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{init_model, mean_models, model_distance, train, Architecture, ModelParams, TrainConfig};
use crate::rng::{derive_path, derive_seed, rng_from, tags};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsampleSet {
    pub subsamples: Vec<Vec<usize>>,
    pub subsample_size: usize,
    pub seed: u64,
}

impl SubsampleSet {
    pub fn is_pairwise_disjoint(&self) -> bool {
        let mut seen = HashSet::new();
        self.subsamples.iter().flatten().all(|&i| seen.insert(i))
    }
}

/// Draws `m` disjoint index sets of size `n` from a seeded shuffle of the pool.
///
/// For a fixed seed and `n`, the sets for a smaller `m` are a prefix of the
/// sets for a larger `m`.
pub fn generate_subsamples(pool_size: usize, n: usize, m: usize, seed: u64) -> Result<SubsampleSet> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidParameter("subsample size and count must be positive".into()));
    }
    let needed = n.checked_mul(m).unwrap_or(usize::MAX);
    if needed > pool_size {
        return Err(Error::InsufficientData {
            needed,
            available: pool_size,
        });
    }
    let mut order: Vec<usize> = (0..pool_size).collect();
    order.shuffle(&mut rng_from(derive_seed(seed, tags::SUBSAMPLE)));
    Ok(SubsampleSet {
        subsamples: order.chunks(n).take(m).map(<[usize]>::to_vec).collect(),
        subsample_size: n,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bucket<T> {
    /// First model assigned to the bucket; membership is judged against it.
    pub representative: ModelParams<T>,
    pub members: Vec<ModelParams<T>>,
    pub source_subsample_ids: Vec<usize>,
}

impl<T: Scalar> Bucket<T> {
    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn mean(&self) -> Result<ModelParams<T>> {
        mean_models(&self.members)
    }
}

/// Greedy first-fit grouping returning member indices per bucket, sorted by
/// size (descending) with ties kept in creation order.
pub fn bucket_indices<T: Scalar>(models: &[ModelParams<T>], delta: T) -> Result<Vec<Vec<usize>>> {
    if models.is_empty() {
        return Err(Error::Empty("model list"));
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, model) in models.iter().enumerate() {
        let mut home = None;
        for (g, group) in groups.iter().enumerate() {
            if model_distance(&models[group[0]], model)? <= delta {
                home = Some(g);
                break;
            }
        }
        match home {
            Some(g) => groups[g].push(i),
            None => groups.push(vec![i]),
        }
    }
    // stable sort keeps creation order among equal sizes
    groups.sort_by_key(|g| std::cmp::Reverse(g.len()));
    Ok(groups)
}

/// Buckets models by Δ-closeness to each bucket's representative.
pub fn bucket_models<T: Scalar>(models: &[ModelParams<T>], delta: T) -> Result<Vec<Bucket<T>>> {
    Ok(bucket_indices(models, delta)?
        .into_iter()
        .map(|ids| Bucket {
            representative: models[ids[0]].clone(),
            members: ids.iter().map(|&i| models[i].clone()).collect(),
            source_subsample_ids: ids,
        })
        .collect())
}

/// Released ensemble: one averaged model per selected bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble<T> {
    pub members: Vec<ModelParams<T>>,
    pub bucket_sizes: Vec<usize>,
    pub delta: f64,
    pub requested_k: usize,
    pub effective_k: usize,
    /// Set when fewer than `requested_k` buckets existed.
    pub warning: Option<String>,
}

impl<T: Scalar> Ensemble<T> {
    pub fn from_buckets(buckets: &[Bucket<T>], delta: f64, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("k must be ≥ 1".into()));
        }
        if buckets.is_empty() {
            return Err(Error::Empty("bucket list"));
        }
        let effective_k = k.min(buckets.len());
        let warning = (effective_k < k).then(|| {
            let msg = format!("only {} buckets at Δ={delta}; ensemble reduced from k={k}", buckets.len());
            log::warn!("{msg}");
            msg
        });
        let top = &buckets[..effective_k];
        Ok(Self {
            members: top.iter().map(Bucket::mean).collect::<Result<_>>()?,
            bucket_sizes: top.iter().map(Bucket::k).collect(),
            delta,
            requested_k: k,
            effective_k,
            warning,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub arch: Architecture,
    pub train: TrainConfig,
    /// Number of disjoint subsamples (and models), `m`.
    pub subsample_count: usize,
    /// Records per subsample, `N`. Defaults to `pool / m`.
    pub subsample_size: Option<usize>,
    pub delta: f64,
    pub k: usize,
    pub seed: u64,
    /// Number of distinct initializations cycled across models; 1 means every
    /// model starts from the same weights.
    pub init_count: usize,
}

impl EnsembleConfig {
    pub fn new(arch: Architecture) -> Self {
        Self {
            arch,
            train: TrainConfig::default(),
            subsample_count: 25,
            subsample_size: None,
            delta: 0.01,
            k: 5,
            seed: 0,
            init_count: 1,
        }
    }

    pub fn resolved_subsample_size(&self, pool: usize) -> usize {
        self.subsample_size
            .unwrap_or(pool / self.subsample_count.max(1))
    }

    /// Initialization seed of the `i`-th model.
    pub fn init_seed(&self, i: usize) -> u64 {
        if self.init_count <= 1 {
            self.seed
        } else {
            derive_path(self.seed, &[tags::INIT, (i % self.init_count) as u64])
        }
    }
}

/// Trains one model per disjoint subsample. Each job's shuffle stream is
/// derived from `(seed, subsample index)`, so parallel scheduling does not
/// affect the result. Batch size is capped at the subsample size.
pub fn train_subsample_models<T: Scalar>(
    pool: &LabeledDataset<T>,
    cfg: &EnsembleConfig,
) -> Result<(SubsampleSet, Vec<ModelParams<T>>)> {
    let n = cfg.resolved_subsample_size(pool.len());
    let subsamples = generate_subsamples(pool.len(), n, cfg.subsample_count, cfg.seed)?;
    let train_cfg = TrainConfig {
        batch_size: cfg.train.batch_size.min(n),
        ..cfg.train.clone()
    };
    let models = subsamples
        .subsamples
        .par_iter()
        .enumerate()
        .map(|(i, idx)| {
            let init = init_model(&cfg.arch, cfg.init_seed(i));
            let job = train_cfg.with_seed(derive_path(cfg.seed, &[tags::MEMBER, i as u64]));
            train(&init, &pool.select(idx), &job)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((subsamples, models))
}

#[derive(Debug, Clone)]
pub struct EnsembleBuild<T> {
    pub ensemble: Ensemble<T>,
    pub buckets: Vec<Bucket<T>>,
    pub subsamples: SubsampleSet,
}

/// Trains `m` models on disjoint subsamples, buckets them at Δ and averages
/// the `k` largest buckets.
pub fn build_ensemble<T: Scalar>(pool: &LabeledDataset<T>, cfg: &EnsembleConfig) -> Result<EnsembleBuild<T>> {
    if cfg.k == 0 {
        return Err(Error::InvalidParameter("k must be ≥ 1".into()));
    }
    let (subsamples, models) = train_subsample_models(pool, cfg)?;
    let buckets = bucket_models(&models, T::of(cfg.delta))?;
    let ensemble = Ensemble::from_buckets(&buckets, cfg.delta, cfg.k)?;
    Ok(EnsembleBuild {
        ensemble,
        buckets,
        subsamples,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KAnonymityReport {
    pub bucket_sizes: Vec<usize>,
    /// Largest bucket size: the k of k-anonymity integral privacy.
    pub k: usize,
    /// Every subsample contributes to at most one bucket.
    pub sources_disjoint: bool,
}

pub fn kanonymity_report<T: Scalar>(buckets: &[Bucket<T>]) -> KAnonymityReport {
    let bucket_sizes: Vec<usize> = buckets.iter().map(Bucket::k).collect();
    let mut seen = HashSet::new();
    let sources_disjoint = buckets
        .iter()
        .flat_map(|b| &b.source_subsample_ids)
        .all(|id| seen.insert(*id));
    KAnonymityReport {
        k: bucket_sizes.iter().copied().max().unwrap_or(0),
        bucket_sizes,
        sources_disjoint,
    }
}
