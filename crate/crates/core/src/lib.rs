//! Firth bias reduction for small-sample classifiers.
//!
//! Multinomial logistic regression, a small MLP and a cosine classifier,
//! trained by minibatch SGD with an optional penalty on the predicted
//! probabilities (Firth / KL-to-uniform, KL-to-prior, confidence) or on the
//! weights (L2). Around the models sit a Fisher-information oracle, a
//! geometric-distribution bias demo, a few-shot episode sampler and the
//! paired-trial evaluation used to tune and compare penalties.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod cosine;
pub mod episodes;
pub mod error;
pub mod eval;
pub mod geom;
pub mod io;
pub mod linalg;
pub mod model;
pub mod penalty;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
pub use model::{FeatureSet, LogisticParams, MlpParams, ProbMatrix};
pub use penalty::{PenaltyConfig, PenaltyKind};
pub use train::{Arch, Classifier, TrainConfig, TrainedModel};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// `(0..n).map(f)` with order preserved; parallel when the feature is on.
#[cfg(feature = "parallel")]
pub(crate) fn par_map_indexed<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map_indexed<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}
