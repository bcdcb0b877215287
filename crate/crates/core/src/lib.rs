//! Engagement modeling toolkit for frame-level interaction logs.
//!
//! Frame CSVs are aggregated into overlapping windows, modeled with boosted
//! trees under three split protocols, and analysed for engagement sequences
//! and re-engagement policies.

mod error;

pub mod cli;
pub mod dataset;
pub mod metrics;
pub mod models;
pub mod policy;
pub mod preprocess;
pub mod protocols;
pub mod rng;
pub mod sequences;
pub mod stats;

pub use error::{Error, Result};
