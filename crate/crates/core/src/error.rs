use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("corpus is empty after filtering")]
    EmptyCorpus,

    #[error("corpus needs at least 2 classes, found {0}")]
    TooFewClasses(usize),

    #[error("class id {0} out of range")]
    InvalidClass(usize),

    #[error("feature pool for class {class} holds {available} features, {requested} requested")]
    PoolUnderflow {
        class: usize,
        requested: usize,
        available: usize,
    },

    #[error("labeled feature set is empty")]
    NoLabeledFeatures,

    #[error("feature {0} does not occur in the corpus")]
    AbsentFeature(usize),

    #[error("KL divergence undefined: q[{index}] = 0 where p[{index}] > 0")]
    AbsoluteContinuity { index: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::PoolUnderflow { .. } | Error::NoLabeledFeatures => 3,
            Error::NonFinite(_) | Error::AbsoluteContinuity { .. } => 4,
            _ => 2,
        }
    }
}
