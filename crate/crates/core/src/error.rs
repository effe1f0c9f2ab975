use thiserror::Error;

/// Failure modes shared by every module.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate chart: {0}")]
    DegenerateChart(String),
    #[error("positivity violation: {0}")]
    PositivityViolation(String),
    #[error("branch failure: {0}")]
    BranchFailure(String),
    #[error("resolution error: {message} (required nodes: {required})")]
    ResolutionError { message: String, required: usize },
    #[error("quantization error: {0}")]
    QuantizationError(String),
    #[error("unsupported symbol: {0}")]
    UnsupportedSymbol(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-readable kind, used by the CLI summary.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NumericalFailure(_) => "NumericalFailure",
            Error::InvalidInput(_) => "InvalidInput",
            Error::InsufficientData(_) => "InsufficientData",
            Error::DegenerateChart(_) => "DegenerateChart",
            Error::PositivityViolation(_) => "PositivityViolation",
            Error::BranchFailure(_) => "BranchFailure",
            Error::ResolutionError { .. } => "ResolutionError",
            Error::QuantizationError(_) => "QuantizationError",
            Error::UnsupportedSymbol(_) => "UnsupportedSymbol",
        }
    }
}
