use thiserror::Error;

/// Errors raised by the library.
///
/// The CLI maps these onto exit codes through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("matrix is not unitary ({context}): deviation {deviation:.3e}")]
    NotUnitary { context: String, deviation: f64 },

    /// The fourth-moment closed form was evaluated on non-unitary input; the
    /// value is still returned so callers can decide what to do with it.
    #[error(
        "fourth moment evaluated on non-unitary input (deviation {deviation:.3e}), value {value}"
    )]
    NonUnitaryMoment { value: f64, deviation: f64 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("missing visibility threshold: {0}")]
    MissingThreshold(String),

    #[error("invalid visibility threshold: {0}")]
    InvalidThreshold(String),

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("internal consistency check failed: {0}")]
    Inconsistent(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// 1 for file/parse errors, 3 for internal-consistency errors, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Json(_) => 1,
            Error::Inconsistent(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
