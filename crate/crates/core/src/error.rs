use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    /// `D ≈ Id`: both moments of the optimal-scale ratio vanish.
    #[error(
        "degenerate denoiser: E<sigma*xi, D(Y)-Y> = {denominator:e} is negligible against \
         E|D(Y)-Y|^2 = {numerator:e}; the optimal scale is undefined"
    )]
    DegenerateDenoiser { numerator: f64, denominator: f64 },

    #[error("iteration diverged at step {iteration} (iterate norm {norm:e})")]
    Divergence { iteration: usize, norm: f64 },

    #[error("no unique fixed point: spectral radius of the affine iteration is {spectral_radius}")]
    NoUniqueFixedPoint { spectral_radius: f64 },

    #[error("need at least one pair of distinct points")]
    InsufficientPoints,

    #[error("lipschitz estimate {estimate} exceeds the exact bound {exact}")]
    LipschitzBoundViolated { estimate: f64, exact: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
