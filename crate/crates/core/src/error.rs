use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("dataset is invalid: {0}")]
    InvalidDataset(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-binary treatment value `{value}` in row {row}")]
    NonBinaryTreatment { row: usize, value: String },

    #[error("non-finite value in row {row}, column `{column}`")]
    NonFiniteValue { row: usize, column: String },

    #[error("coupling flow needs dimension >= 2, got {0}")]
    DimensionTooSmall(usize),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("empty sample passed to a distance estimator")]
    EmptySample,

    #[error("samples have different dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),

    #[error("all weights in a group are zero")]
    AllZeroWeights,

    #[error("negative or non-finite weight {0}")]
    InvalidWeight(f64),

    #[error("sinkhorn underflow: {0}")]
    NumericalUnderflow(String),

    #[error("training data contains a single treatment arm")]
    SingleArmData,

    #[error("oracle nuisances are unavailable: {0}")]
    OracleUnavailable(String),

    #[error("a covariate propensity model is required for {0}")]
    MissingPropensity(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("metric reports refer to different quantities ({0} vs {1})")]
    MismatchedQuantity(String, String),

    #[error("expansion ratio needs at least two distinct rows")]
    DegenerateSample,

    #[error("empty hyperparameter grid")]
    EmptyGrid,

    #[error("cannot read `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (config, files, schemas) rather
    /// than failures during a run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::MissingColumn(_)
                | Error::NonBinaryTreatment { .. }
                | Error::NonFiniteValue { .. }
                | Error::InvalidConfig(_)
                | Error::InvalidDataset(_)
                | Error::Io { .. }
                | Error::Csv(_)
                | Error::Toml(_)
                | Error::EmptyGrid
                | Error::MissingPropensity(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
