use thiserror::Error;

/// Errors raised by the numerical kernels and studies.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OuError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("range error: {0}")]
    Range(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("drift is not Hurwitz: eigenvalue {re:+.6e}{im:+.6e}i has real part >= -1e-10")]
    NotHurwitz { re: f64, im: f64 },

    #[error("matrix is not symmetric positive semidefinite: {0}")]
    NotPsd(String),

    #[error("degenerate covariance: {0}")]
    Degenerate(String),

    #[error("not applicable: {0}")]
    Inapplicable(String),

    #[error("unsupported: {0}")]
    Capability(String),

    #[error("missing derivative oracle: {0}")]
    MissingOracle(String),

    #[error("missing continuity information for the field")]
    MissingContinuity,

    #[error("contour error: {0}")]
    Contour(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, OuError>;
