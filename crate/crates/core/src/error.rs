use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix is not positive definite (pivot {pivot:e} at row {row}, jitter {jitter:e})")]
    NotPositiveDefinite { row: usize, pivot: f64, jitter: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("diverged at step {step}: {context}")]
    Divergence { step: usize, context: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("acquisition failed: {0}")]
    Acquisition(String),

    #[error("coefficient ({latent}, {term}): {source}")]
    Coefficient {
        latent: usize,
        term: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parameter(_) => 2,
            Error::Divergence { .. } | Error::Numeric(_) | Error::NotPositiveDefinite { .. } => 3,
            Error::Coefficient { source, .. } => source.exit_code(),
            Error::Io(_) | Error::Format(_) | Error::Json(_) => 4,
            _ => 1,
        }
    }
}
