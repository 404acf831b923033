use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    /// The Cartesian derivative formula has a removable singularity at the
    /// origin; callers must pass exactly zero instead.
    #[error("|x| = {radius:e} lies in the singular band (0, {limit:e}); evaluate at x = 0 instead")]
    SingularBand { radius: f64, limit: f64 },

    #[error("covariance factorization failed beyond the jitter budget (min eigenvalue {min_eigenvalue:e})")]
    Factorization { min_eigenvalue: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("exponents are not in decreasing order")]
    UnorderedSpectrum,

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

impl Error {
    /// Errors that stem from an invalid correlation model rather than from
    /// the numerics run on top of it.
    pub fn is_model_error(&self) -> bool {
        matches!(self, Error::InvalidModel(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
