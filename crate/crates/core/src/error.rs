use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical blow-up at step {step} (t = {time}); try a smaller time step")]
    NumericalBlowup { step: u64, time: f64 },

    #[error("degenerate climatology (mean {mean}, std {std}); forcing is likely below the chaotic regime")]
    DegenerateClimatology { mean: f64, std: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("singular covariance matrix (condition estimate {condition:e})")]
    SingularCovariance { condition: f64 },

    #[error("matrix is not positive semidefinite: eigenvalue {eigenvalue:e} below -{tolerance:e}; the integrated covariance is likely under-sampled")]
    NotPositiveSemidefinite { eigenvalue: f64, tolerance: f64 },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("grids do not overlap")]
    NonOverlapping,

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 2 for configuration problems, 1 for everything numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) => 2,
            _ => 1,
        }
    }
}
