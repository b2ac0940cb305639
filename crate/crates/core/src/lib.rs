//! Within-basket recommendation built on two behavioral views of shopping
//! transactions: a user-item bipartite graph and a basket hypergraph. Items
//! are ranked to complete a partially observed basket; training combines a
//! BPR ranking objective with cross- and within-behavior contrastive terms
//! over consistency-aware edge-dropped graph views.
//!
//! The crate is organized along the pipeline:
//!
//! - [`dataset`]: ingestion, basket filtering, within-basket split
//! - [`graphs`]: sparse construction of both views with normalization
//! - [`propagation`]: linear message passing, pooling, and exact adjoints
//! - [`augmentation`]: edge importance, drop probabilities, view sampling
//! - [`objectives`]: InfoNCE terms, ranking score, BPR, multi-task loss
//! - [`trainer`]: mini-batch training loop and checkpoints
//! - [`evaluation`]: full-ranking metrics and the noise-robustness harness
//! - [`cli`]: the `basketrec` command-line front end

pub mod augmentation;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod graphs;
pub mod objectives;
pub mod persist;
pub mod propagation;
pub mod rng;
pub mod trainer;

#[cfg(test)]
pub(crate) mod testutil;

pub use config::TrainConfig;
pub use error::{Error, Result};
