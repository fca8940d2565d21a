//! Drift detection over data streams with ensembles of Δ-integrally-private
//! neural models.
//!
//! Models are trained on disjoint subsamples, grouped into buckets of models
//! that lie within Δ of each other, and averaged per bucket. The ensemble's
//! predictive entropy feeds an ADWIN detector, so drift is flagged without
//! labels; labels are requested only for the chunk that triggered retraining.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! below fix the scalar to `f64`, which is what the command line tool uses.

pub mod datasets;
pub mod detector;
pub mod ensemble;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod stream;
pub mod theory;

pub use detector::{predictive_entropy, Adwin, AdwinUpdate};
pub use error::{Error, Result};
pub use nn::{Architecture, TrainConfig};
pub use scalar::Scalar;
pub use stream::{run_baseline, run_ipdd, Method, StreamConfig};

pub type Model = nn::ModelParams<f64>;
pub type Model32 = nn::ModelParams<f32>;
pub type Dataset = datasets::LabeledDataset<f64>;
pub type Dataset32 = datasets::LabeledDataset<f32>;
pub type Ensemble = ensemble::Ensemble<f64>;
pub type Bucket = ensemble::Bucket<f64>;
pub type RunResult = stream::RunResult<f64>;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
