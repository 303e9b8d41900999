use thiserror::Error;

use crate::env::{Computation, NodeId};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("computation {0:?} is not available in this belief")]
    UnavailableComputation(Computation),

    #[error("node {0} is not a reward node of this tree")]
    InvalidNode(NodeId),

    #[error("invalid tree structure: {0}")]
    InvalidTree(String),

    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grammar vocabulary `{0}` is empty")]
    EmptyVocabulary(&'static str),

    #[error("duplicate vocabulary item `{0}`")]
    DuplicateVocabulary(String),

    #[error("unknown vocabulary item `{0}`")]
    UnknownVocabulary(String),

    #[error("termination steps cannot be featurized")]
    TerminateInFeatures,

    #[error("decision tree input has no feature columns")]
    NoColumns,

    #[error("fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unknown render format `{0}`")]
    UnknownFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable snake_case name of the variant, for machine-readable records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnavailableComputation(_) => "unavailable_computation",
            Error::InvalidNode(_) => "invalid_node",
            Error::InvalidTree(_) => "invalid_tree",
            Error::InvalidEnvironment(_) => "invalid_environment",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::EmptyVocabulary(_) => "empty_vocabulary",
            Error::DuplicateVocabulary(_) => "duplicate_vocabulary",
            Error::UnknownVocabulary(_) => "unknown_vocabulary",
            Error::TerminateInFeatures => "terminate_in_features",
            Error::NoColumns => "no_columns",
            Error::FingerprintMismatch { .. } => "fingerprint_mismatch",
            Error::Format(_) => "format",
            Error::UnknownFormat(_) => "unknown_format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
