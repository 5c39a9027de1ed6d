use std::path::PathBuf;

/// Errors raised by the training framework.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid sparsity {value} ({context}); expected a value in [0, 1]")]
    InvalidSparsity { value: f64, context: String },
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: u64, detail: String },
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("insufficient data: need {needed} transitions, have {available}")]
    InsufficientData { needed: usize, available: usize },
    #[error("enumeration needs {needed} nodes, budget is {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },
    #[error("unknown environment '{name}'; registered: {registered}")]
    UnknownEnv { name: String, registered: String },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
