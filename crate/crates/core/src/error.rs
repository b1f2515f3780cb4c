use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The chain induced by a policy does not have the structure an operation needs
    /// (for example more than one recurrent class for a bias solve).
    #[error("unsupported chain structure: {0}")]
    UnsupportedStructure(String),

    #[error("enumerating {count} deterministic policies exceeds the cap of {cap}")]
    Capacity { count: u128, cap: u64 },

    #[error("ill-posed problem: {0}")]
    IllPosed(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
