use thiserror::Error;

/// Crate-wide error type.
///
/// Variants split along the CLI's exit-code boundary: `InvalidParameter`,
/// `Parse`, and `Data` are usage errors; the rest are numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at byte {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("mismatched inputs: {0}")]
    Mismatch(String),

    #[error("special function failed to converge: {0}")]
    SpecialFunction(String),

    #[error("optimizer did not converge within {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("probability underflow for count {count} (p = {prob:e})")]
    Underflow { count: u32, prob: f64 },

    #[error("chi-square binning left too few cells ({cells} cells, {params} parameters)")]
    InsufficientCells { cells: usize, params: usize },

    #[error("models are not nested: {0}")]
    NotNested(String),
}

impl Error {
    /// True for errors caused by bad user input rather than numerical trouble.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. } | Error::Parse { .. } | Error::Data(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
