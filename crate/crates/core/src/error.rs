use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    DivergedTraining { epoch: usize },

    #[error("privacy accounting failed: {0}")]
    AccountingError(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("missing auxiliary data: {0}")]
    MissingAuxiliary(String),

    #[error("missing shadow fleet: {0}")]
    MissingFleet(String),

    #[error("missing property inference output: {0}")]
    MissingPropInf(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("invalid composition plan: {0}")]
    InvalidPlan(String),

    #[error("corrupt artifact {path}: {reason}")]
    CorruptArtifact { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn corrupt(path: impl AsRef<std::path::Path>, reason: impl Into<String>) -> Self {
        Error::CorruptArtifact {
            path: path.as_ref().display().to_string(),
            reason: reason.into(),
        }
    }
}
