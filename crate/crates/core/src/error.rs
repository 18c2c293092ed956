use thiserror::Error;

/// Errors surfaced by the market library.
#[derive(Debug, Error)]
pub enum MarketError {
    /// An input left the domain of the HARA utility or one of its derivatives.
    #[error("domain error: {0}")]
    Domain(String),

    /// The excess-demand bracketing search found no sign change.
    #[error("no price bracket: {0}")]
    Bracket(String),

    /// A population cannot support the requested operation (e.g. empty market side).
    #[error("degenerate market: {0}")]
    Degenerate(String),

    /// A nonlinear fit did not converge from any start.
    #[error("fit failed: {0}")]
    Fit(String),

    /// A data file could not be parsed.
    #[error("parse error (line {line}): {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MarketError>;
