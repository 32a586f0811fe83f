//! Word factors: decompose pretrained word embeddings into sparse non-negative
//! combinations of learned dictionary atoms, group the atoms by co-activation,
//! and use the groups to inspect, edit and evaluate embeddings.
//!
//! The pipeline is
//!
//! 1. [`embeddings`]: load GloVe text / word2vec binary vectors and attach word frequencies,
//! 2. [`dict_learn`]: learn an overcomplete dictionary with FISTA inference and
//!    diagonally preconditioned dictionary updates,
//! 3. [`sparse_code`]: infer non-negative sparse codes for the vocabulary,
//! 4. [`groups`]: spectral clustering of the normalized code covariance,
//! 5. [`analysis`] and [`analogy`]: factor listings, decompositions, manipulations
//!    and the analogy benchmark with factor-group selection.

pub mod analogy;
pub mod analysis;
pub mod assignment;
pub mod cli;
pub mod dict_learn;
pub mod embeddings;
pub mod error;
pub mod groups;
pub mod kmeans;
pub mod linalg;
pub mod neighbors;
pub mod sparse_code;
pub mod svg;
pub mod synthetic;

pub use analogy::{AnalogyTask, EvalReport, Question};
pub use error::{Error, Result};
pub use dict_learn::{TrainConfig, TrainerState};
pub use embeddings::{EmbeddingSet, FrequencyMode, Vocabulary};
pub use groups::{CovarianceResult, FactorGrouping};
pub use sparse_code::{Dictionary, SparseCodes};
