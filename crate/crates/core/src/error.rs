use thiserror::Error;

/// Crate-wide error type.
///
/// Variants map onto the CLI exit codes: usage errors exit 1, input/format
/// errors exit 2, numerical failures exit 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("empty domain: {0}")]
    EmptyDomain(&'static str),

    #[error("non-finite gradient for parameter '{param}'")]
    NanGradient { param: String },

    #[error("non-finite loss at iteration {iteration} (stage {stage})")]
    NanLoss { iteration: usize, stage: u8 },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("bad configuration: {0}")]
    Config(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error class (0 = success is never an error).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::NanGradient { .. } | Error::NanLoss { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
