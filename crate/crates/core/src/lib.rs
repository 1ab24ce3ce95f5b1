//! Robustness testing for k-nearest-neighbor search.
//!
//! The crate bundles vector datasets and exact ground truth, three indexes
//! (exhaustive, ball tree, randomized KD forest), a small dense network with
//! Adam, an actor-critic attacker that searches for Gaussian "jitter" regions
//! where an approximate index answers wrongly, PCA diagnostics and a
//! recall/throughput benchmark.

pub mod analysis;
pub mod attack;
pub mod balltree;
pub mod bench;
pub mod cli;
mod error;
pub mod index;
pub mod kdforest;
pub mod metric;
pub mod nn;
pub mod rng;
pub mod vecdata;

pub use error::{Error, Result};
pub use index::{build, label_fp, FpLabel, Index, IndexKind, IndexSpec, QueryResult};
pub use vecdata::{GroundTruth, VectorSet};
