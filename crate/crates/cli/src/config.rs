//! Flat `key=value` experiment configuration.
//!
//! Keys are dotted (`train.epochs=50`), `#` starts a comment, and blank
//! lines are ignored. Every key has a default, so an empty file is a valid
//! configuration. Later assignments win, and `--set` overrides are applied
//! after the file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use ipdd_core::datasets::{CsvSchema, DriftSpec};
use ipdd_core::ensemble::EnsembleConfig;
use ipdd_core::nn::Architecture;
use ipdd_core::stream::{DpConfig, Method, StreamConfig};
use ipdd_core::TrainConfig;
use sha2::{Digest, Sha256};

/// Where a value came from, for error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Default,
    File { path: PathBuf, line: usize },
    Override,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Default => f.write_str("default"),
            Origin::File { path, line } => write!(f, "{}:{line}", path.display()),
            Origin::Override => f.write_str("--set"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{origin}: {message}")]
pub struct ConfigError {
    pub origin: Origin,
    pub message: String,
}

impl ConfigError {
    fn new(origin: &Origin, message: impl Into<String>) -> Self {
        Self {
            origin: origin.clone(),
            message: message.into(),
        }
    }
}

/// Recognized keys and their defaults.
const DEFAULTS: &[(&str, &str)] = &[
    ("adwin_delta", "0.001"),
    ("chunk_frac", "0.02"),
    ("dataset.classes", ""),
    ("dataset.delimiter", ","),
    ("dataset.drift", "abrupt"),
    ("dataset.kind", "sine"),
    ("dataset.label_column", "label"),
    ("dataset.n", "20000"),
    ("dataset.path", ""),
    ("dataset.positions", ""),
    ("dataset.scale", "true"),
    ("dataset.seed", ""),
    ("dataset.transition", "1000"),
    ("delta", "0.01"),
    ("dp.clip", "1.0"),
    ("dp.delta", "0.00001"),
    ("dp.epsilons", "0.1,0.5,1.0"),
    ("init_count", "1"),
    ("init_frac", "0.10"),
    ("k", "5"),
    ("m", "25"),
    ("methods", "ipdd,no_retrain"),
    ("model.arch", "ann"),
    ("n", ""),
    ("seeds", "0"),
    ("theory.deltas", "0.0001,0.001,0.01,0.1"),
    ("theory.init_counts", "1"),
    ("theory.ms", "20"),
    ("theory.n", "100"),
    ("theory.trials", "30"),
    ("train.batch", "10"),
    ("train.epochs", "50"),
    ("train.lr", "0.1"),
    ("window.capacity", ""),
];

/// Raw key/value assignments with their origins.
#[derive(Debug, Clone, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<&'static str, (String, Origin)>,
    base_dir: PathBuf,
}

impl Default for RawConfig {
    fn default() -> Self {
        Self {
            values: DEFAULTS
                .iter()
                .map(|&(k, v)| (k, (v.to_string(), Origin::Default)))
                .collect(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl RawConfig {
    pub fn set(&mut self, key: &str, value: &str, origin: Origin) -> Result<(), ConfigError> {
        let key = key.trim();
        let Some(&(canonical, _)) = DEFAULTS.iter().find(|(k, _)| *k == key) else {
            return Err(ConfigError::new(&origin, format!("unknown key `{key}`")));
        };
        self.values.insert(canonical, (value.trim().to_string(), origin));
        Ok(())
    }

    /// Applies one `key=value` assignment from `--set`.
    pub fn set_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::new(&Origin::Override, format!("expected KEY=VALUE, got `{assignment}`")))?;
        self.set(k, v, Origin::Override)
    }

    pub fn parse_str(&mut self, text: &str, path: &Path) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let origin = Origin::File {
                path: path.to_path_buf(),
                line: i + 1,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::new(&origin, format!("expected KEY=VALUE, got `{line}`")))?;
            self.set(k, v, origin)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ConfigError::new(
                &Origin::File {
                    path: path.to_path_buf(),
                    line: 0,
                },
                format!("cannot read config: {e}"),
            )
        })?;
        let mut cfg = Self {
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            ..Self::default()
        };
        cfg.parse_str(&text, path)?;
        Ok(cfg)
    }

    /// Effective configuration, one `key=value` per line in key order.
    pub fn canonical(&self) -> String {
        self.values
            .iter()
            .map(|(k, (v, _))| format!("{k}={v}\n"))
            .collect()
    }

    /// SHA-256 of the canonical form; independent of assignment order.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn get(&self, key: &str) -> (&str, &Origin) {
        let (v, o) = &self.values[key];
        (v.as_str(), o)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        let (v, o) = self.get(key);
        v.parse()
            .map_err(|_| ConfigError::new(o, format!("invalid value `{v}` for `{key}`")))
    }

    fn optional<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        if self.get(key).0.is_empty() {
            Ok(None)
        } else {
            self.parse(key).map(Some)
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>, ConfigError> {
        let (v, o) = self.get(key);
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| ConfigError::new(o, format!("invalid list item `{s}` for `{key}`")))
            })
            .collect()
    }

    fn check(&self, key: &str, ok: bool, why: &str) -> Result<(), ConfigError> {
        if ok {
            Ok(())
        } else {
            let (v, o) = self.get(key);
            Err(ConfigError::new(o, format!("`{key}={v}`: {why}")))
        }
    }

    /// Typed, validated view of the configuration.
    pub fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        let dataset = match self.get("dataset.kind").0 {
            "sine" => {
                let n: usize = self.parse("dataset.n")?;
                self.check("dataset.n", n >= 2, "need at least two instances")?;
                let mut positions: Vec<usize> = self.list("dataset.positions")?;
                if positions.is_empty() {
                    positions.push(n / 2);
                }
                let transition: usize = self.parse("dataset.transition")?;
                let drift = match self.get("dataset.drift").0 {
                    "none" => DriftSpec::none(),
                    "abrupt" => DriftSpec::abrupt(positions),
                    "gradual" => DriftSpec::gradual(positions, transition),
                    "incremental" => DriftSpec::incremental(positions, transition),
                    other => {
                        return Err(ConfigError::new(
                            self.get("dataset.drift").1,
                            format!("unknown drift `{other}` (none|abrupt|gradual|incremental)"),
                        ))
                    }
                };
                if let Err(e) = drift.validate(n) {
                    return Err(ConfigError::new(self.get("dataset.positions").1, e.to_string()));
                }
                DatasetSpec::Sine {
                    n,
                    drift,
                    seed: self.optional("dataset.seed")?,
                }
            }
            "csv" => {
                let (path, origin) = self.get("dataset.path");
                if path.is_empty() {
                    return Err(ConfigError::new(origin, "`dataset.path` is required for csv datasets"));
                }
                let delimiter = self.get("dataset.delimiter").0;
                self.check("dataset.delimiter", delimiter.len() == 1, "delimiter must be one byte")?;
                DatasetSpec::Csv {
                    path: self.base_dir.join(path),
                    schema: CsvSchema {
                        label_column: self.get("dataset.label_column").0.to_string(),
                        class_count: self.optional("dataset.classes")?,
                        delimiter: delimiter.as_bytes()[0],
                        scale: self.parse("dataset.scale")?,
                        ..CsvSchema::default()
                    },
                }
            }
            other => {
                return Err(ConfigError::new(
                    self.get("dataset.kind").1,
                    format!("unknown dataset kind `{other}` (sine|csv)"),
                ))
            }
        };

        let archs = self
            .get("model.arch")
            .0
            .split(',')
            .map(|a| ArchSpec::parse(a.trim()).ok_or_else(|| ConfigError::new(self.get("model.arch").1, format!("unknown architecture `{a}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        self.check("model.arch", !archs.is_empty(), "at least one architecture is required")?;

        let epsilons: Vec<f64> = self.list("dp.epsilons")?;
        self.check("dp.epsilons", epsilons.iter().all(|&e| e > 0.0), "epsilons must be positive")?;
        let mut methods = Vec::new();
        for name in self.get("methods").0.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            if name == "dp" {
                methods.extend(epsilons.iter().map(|&e| Method::Dp(e)));
            } else {
                methods.push(
                    name.parse::<Method>()
                        .map_err(|e| ConfigError::new(self.get("methods").1, e.to_string()))?,
                );
            }
        }
        self.check("methods", !methods.is_empty(), "at least one method is required")?;

        let seeds: Vec<u64> = self.list("seeds")?;
        self.check("seeds", !seeds.is_empty(), "at least one seed is required")?;

        let delta: f64 = self.parse("delta")?;
        self.check("delta", delta > 0.0, "Δ must be positive")?;
        let adwin_delta: f64 = self.parse("adwin_delta")?;
        self.check("adwin_delta", adwin_delta > 0.0 && adwin_delta < 1.0, "must lie in (0, 1)")?;
        let m: usize = self.parse("m")?;
        self.check("m", m >= 1, "need at least one subsample")?;
        let k: usize = self.parse("k")?;
        self.check("k", k >= 1, "k must be at least 1")?;
        let init_count: usize = self.parse("init_count")?;
        self.check("init_count", init_count >= 1, "must be at least 1")?;
        let train = TrainConfig {
            epochs: self.parse("train.epochs")?,
            batch_size: self.parse("train.batch")?,
            learning_rate: self.parse("train.lr")?,
            shuffle_seed: 0,
        };
        self.check("train.batch", train.batch_size >= 1, "batch size must be positive")?;
        self.check(
            "train.lr",
            train.learning_rate > 0.0 && train.learning_rate.is_finite(),
            "learning rate must be positive",
        )?;
        let init_frac: f64 = self.parse("init_frac")?;
        self.check("init_frac", init_frac > 0.0 && init_frac < 1.0, "must lie in (0, 1)")?;
        let chunk_frac: f64 = self.parse("chunk_frac")?;
        self.check("chunk_frac", chunk_frac > 0.0 && chunk_frac <= 1.0, "must lie in (0, 1]")?;
        let window_capacity: Option<usize> = self.optional("window.capacity")?;
        self.check("window.capacity", window_capacity != Some(0), "must be positive")?;
        let dp = DpConfig {
            clip: self.parse("dp.clip")?,
            delta: self.parse("dp.delta")?,
        };
        self.check("dp.clip", dp.clip > 0.0, "must be positive")?;
        self.check("dp.delta", dp.delta > 0.0 && dp.delta < 1.0, "must lie in (0, 1)")?;

        let theory = TheorySettings {
            deltas: self.list("theory.deltas")?,
            ms: self.list("theory.ms")?,
            init_counts: self.list("theory.init_counts")?,
            subsample_size: self.parse("theory.n")?,
            trials: self.parse("theory.trials")?,
        };
        self.check("theory.deltas", theory.deltas.iter().all(|&d| d > 0.0), "Δ values must be positive")?;
        self.check("theory.ms", theory.ms.iter().all(|&m| m >= 2), "m values must be at least 2")?;
        self.check("theory.init_counts", theory.init_counts.iter().all(|&c| c >= 1), "must be at least 1")?;
        self.check("theory.trials", theory.trials >= 1, "need at least one trial")?;
        self.check("theory.n", theory.subsample_size >= 1, "must be positive")?;

        Ok(ExperimentConfig {
            dataset,
            archs,
            methods,
            seeds,
            stream: StreamSettings {
                delta,
                adwin_delta,
                m,
                subsample_size: self.optional("n")?,
                k,
                init_count,
                train,
                window_capacity,
                init_frac,
                chunk_frac,
                dp,
            },
            theory,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Sine {
        n: usize,
        drift: DriftSpec,
        /// Fixed generator seed; when absent each run seed generates its own stream.
        seed: Option<u64>,
    },
    Csv {
        path: PathBuf,
        schema: CsvSchema,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArchSpec {
    Ann,
    Dnn,
    Hidden(Vec<usize>),
}

impl ArchSpec {
    /// `ann`, `dnn`, or hidden widths joined by `-` (e.g. `16-8`).
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ann" => Some(Self::Ann),
            "dnn" => Some(Self::Dnn),
            _ => {
                let widths: Vec<usize> = s.split('-').map(|w| w.parse().ok()).collect::<Option<_>>()?;
                (!widths.is_empty() && widths.iter().all(|&w| w > 0)).then_some(Self::Hidden(widths))
            }
        }
    }

    pub fn build(&self, input_dim: usize, classes: usize) -> ipdd_core::Result<Architecture> {
        match self {
            Self::Ann => Architecture::ann(input_dim, classes),
            Self::Dnn => Architecture::dnn(input_dim, classes),
            Self::Hidden(h) => Architecture::new(input_dim, h.clone(), classes),
        }
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Ann => f.write_str("ann"),
            Self::Dnn => f.write_str("dnn"),
            Self::Hidden(h) => {
                let parts: Vec<String> = h.iter().map(usize::to_string).collect();
                f.write_str(&parts.join("-"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSettings {
    pub delta: f64,
    pub adwin_delta: f64,
    pub m: usize,
    pub subsample_size: Option<usize>,
    pub k: usize,
    pub init_count: usize,
    pub train: TrainConfig,
    pub window_capacity: Option<usize>,
    pub init_frac: f64,
    pub chunk_frac: f64,
    pub dp: DpConfig,
}

impl StreamSettings {
    pub fn ensemble(&self, arch: Architecture, seed: u64) -> EnsembleConfig {
        EnsembleConfig {
            arch,
            train: self.train.clone(),
            subsample_count: self.m,
            subsample_size: self.subsample_size,
            delta: self.delta,
            k: self.k,
            seed,
            init_count: self.init_count,
        }
    }

    pub fn stream(&self, arch: Architecture, seed: u64) -> StreamConfig {
        StreamConfig {
            ensemble: self.ensemble(arch, seed),
            adwin_delta: self.adwin_delta,
            init_frac: self.init_frac,
            chunk_frac: self.chunk_frac,
            window_capacity: self.window_capacity,
            dp: self.dp,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheorySettings {
    pub deltas: Vec<f64>,
    pub ms: Vec<usize>,
    pub init_counts: Vec<usize>,
    pub subsample_size: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub archs: Vec<ArchSpec>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub stream: StreamSettings,
    pub theory: TheorySettings,
}
