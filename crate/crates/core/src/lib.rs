//! Preference-controlled synthetic interaction data for recommender systems.
//!
//! The pipeline pretrains BPR matrix-factorization embeddings, trains an
//! attention-based item selector jointly with a Gumbel-Softmax item generator,
//! and releases datasets in which a user-chosen fraction `k` of each history
//! is replaced by generated items whose relative similarity to the originals
//! stays under a user-chosen sensitivity `gamma`. Utility of a release is
//! measured by training downstream recommenders on it.

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod generator;
pub mod gradcheck;
pub mod io_util;
pub mod math;
pub mod mf;
pub mod optim;
pub mod privacy;
pub mod rng;
pub mod selector;
pub mod synthesis;
pub mod trainer;

pub use error::{Error, Result};
