//! Multi-view federated training of two-tower retrieval models.
//!
//! The library trains a shared item tower and one user tower per feature
//! view across a population of clients that each hold a single user's data.
//! Client updates pass through a differentially-private local aggregation
//! step and, optionally, a masked secure-aggregation protocol before the
//! server applies them. Evaluation covers warm and cold-start splits of
//! MovieLens-100K-format datasets with ranking metrics.

pub mod data;
pub mod dp;
pub mod dssm;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod secure;
pub mod svd;

pub use error::{Error, Result};
