//! Learning text classifiers from labeled features.
//!
//! A softmax classifier is trained without instance labels by matching its
//! feature-conditional class distributions to reference distributions
//! supplied for a handful of labeled words (generalized expectation over
//! labeled features). Three optional regularizers make training robust to
//! skewed prior knowledge:
//!
//! - neutral features: frequent words pinned to the uniform class distribution,
//! - maximum entropy of the predicted class marginal,
//! - KL divergence from a reference class distribution to the predicted marginal.
//!
//! The crate also carries the data pipeline (ingestion, folds, unbalancing),
//! knowledge construction (information gain, LDA topic words), an L-BFGS
//! minimizer and the experiment harness that compares the methods under
//! cross-validation.

pub mod config;
pub mod corpus;
pub mod error;
pub mod experiments;
pub mod knowledge;
pub mod lda;
pub mod model;
pub mod objective;
pub mod optimizer;
mod rng;

pub use error::{Error, Result};
