use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown configuration `{0}`")]
    UnknownConfiguration(String),

    /// The requested wrench cannot be produced by the geometry.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// A linear solve or iteration broke down.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Infeasible(_) | Error::Numerical(_))
    }
}
