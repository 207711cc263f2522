use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Fisher information singular at some prior sample (some parameter unobservable).
    #[error("singular Fisher information matrix")]
    SingularFim,

    #[error("MSE target {delta:e} is below the minimum achievable MSE {delta_min:e}")]
    Infeasible { delta: f64, delta_min: f64 },

    #[error(
        "covariance band too tight: codeword {codeword} not accepted after {attempts} draws \
         (increase delta or the block length)"
    )]
    BandTooTight { codeword: usize, attempts: usize },

    #[error("least-squares normal matrix is singular: some sub-carrier carries no power")]
    UnexcitedSubcarrier,
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
