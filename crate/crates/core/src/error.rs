use thiserror::Error;

#[derive(Debug, Error)]
pub enum NvmrError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("numerical non-convergence: {0}")]
    NonConvergence(String),

    #[error("masked entries present: {0}")]
    MaskedInput(String),

    #[error("rank-deficient fit: {0}")]
    RankDeficient(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl NvmrError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        NvmrError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the CLI contract: 2 config, 3 non-convergence, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            NvmrError::Config { .. }
            | NvmrError::InvalidInput(_)
            | NvmrError::DegenerateGeometry(_)
            | NvmrError::DimensionMismatch(_)
            | NvmrError::RankDeficient(_)
            | NvmrError::Parse(_) => 2,
            NvmrError::NonConvergence(_) => 3,
            NvmrError::Io(_) | NvmrError::MaskedInput(_) => 4,
        }
    }
}
