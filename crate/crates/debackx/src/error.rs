use thiserror::Error;

/// Crate-wide error type. Variants map onto process exit codes
/// (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-contract input (shape mismatch, unknown glyph, ...).
    #[error("input error: {0}")]
    Input(String),

    /// Bad configuration (empty corpus, inconsistent flags, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A required upstream artifact (checkpoint, manifest) is missing.
    #[error("dependency error: {0}")]
    Dependency(String),

    /// Non-finite values encountered during computation.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image codec error: {0}")]
    ImageCodec(#[from] image::ImageError),
}

impl Error {
    /// Exit code for the CLI: 2 input/config, 3 dependency, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dependency(_) => 3,
            Error::Numerical(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
