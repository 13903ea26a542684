use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CptError>;

#[derive(Debug, Error)]
pub enum CptError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: {message}")]
    InvalidCell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("degenerate treatment vector: {0}")]
    DegenerateTreatment(String),

    #[error("block `{0}` contains a single unit")]
    SingletonBlock(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("IRLS diverged at iteration {iteration} (non-finite weights)")]
    IrlsDiverged { iteration: usize },

    #[error("IRLS did not converge within {iterations} iterations")]
    IrlsNotConverged { iterations: usize },

    #[error("singular system at IRLS iteration {iteration}")]
    SingularHessian { iteration: usize },

    #[error("invalid classifier spec: {0}")]
    InvalidClassifier(String),

    #[error("invalid statistic spec: {0}")]
    InvalidStat(String),

    #[error("invalid permutation plan: {0}")]
    InvalidPlan(String),

    #[error("invalid test spec: {0}")]
    InvalidTest(String),

    #[error("exact enumeration needs {count} evaluations, limit is {limit}")]
    CombinatorialLimit { count: u128, limit: u128 },

    #[error("exact enumeration requires a deterministic classifier, got `{0}`")]
    RandomizedClassifier(String),

    #[error("covariance matrix is not positive definite for rho = {rho} and p = {p}")]
    NotPositiveDefinite { rho: f64, p: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("permutation {index}: {source}")]
    AtPermutation {
        index: usize,
        #[source]
        source: Box<CptError>,
    },

    #[error("replication {index}: {source}")]
    AtReplication {
        index: usize,
        #[source]
        source: Box<CptError>,
    },

    #[error("rho = {rho}, replication {replication}: {source}")]
    AtCell {
        rho: f64,
        replication: usize,
        #[source]
        source: Box<CptError>,
    },
}

impl CptError {
    pub(crate) fn at_permutation(self, index: usize) -> Self {
        CptError::AtPermutation {
            index,
            source: Box::new(self),
        }
    }
}
