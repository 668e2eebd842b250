use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Dataset layout problems: missing directories, empty splits, stray files.
    #[error("structural error: {0}")]
    Structural(String),

    /// Content that violates an invariant (bad label id, size mismatch, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// A snapshot was produced under an incompatible model spec.
    #[error("spec mismatch: {0}")]
    SpecMismatch(String),

    /// A loss term became NaN or infinite during training.
    #[error("non-finite loss term `{term}` at step {step}")]
    NonFinite { term: String, step: u64 },

    #[error("missing input: {0}")]
    MissingInput(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-parsable category used by the CLI for exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Structural(_) => "structural",
            Error::Validation(_) => "validation",
            Error::Config(_) => "invalid-config",
            Error::SpecMismatch(_) => "spec-mismatch",
            Error::NonFinite { .. } => "non-finite-loss",
            Error::MissingInput(_) => "missing-input",
            Error::Io(_) => "io",
            Error::Image(_) => "image",
            Error::Json(_) => "serialization",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
