use thiserror::Error;

/// Errors shared across the crate. Training divergence has its own type in
/// [`crate::train`] because it carries the last finite model state.
#[derive(Debug, Error)]
pub enum Error {
    /// Arguments violate a precondition (bad sizes, probabilities, ranges).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A requested combination is structurally wrong (e.g. a risk form used
    /// with a loss that lacks the property the form's derivation needs).
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed binary or text artifact; `offset` is the first bad byte.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Training left the finite range and could not recover. The richer
    /// [`crate::train::TrainError::Diverged`] carries the salvageable state;
    /// this variant is what pipeline callers see.
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
