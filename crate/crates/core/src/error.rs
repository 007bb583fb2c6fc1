use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not Hurwitz (spectral abscissa {abscissa:.6})")]
    NotHurwitz { abscissa: f64 },

    #[error("decay rate sigma = {sigma} must lie in (0, {limit:.6}) for this matrix")]
    DecayRateTooLarge { sigma: f64, limit: f64 },

    #[error("small-gain condition fails: left side {lhs:.6} >= 1 for lambda = {lambda}")]
    SmallGain { lambda: f64, lhs: f64 },

    #[error("no (eps, nu) pair found satisfying the strengthened small-gain inequality after {halvings} halvings")]
    SmallGainSearch { halvings: u32 },

    #[error("invalid design constant: {0}")]
    Constant(String),

    #[error("invalid quantizer: {0}")]
    Quantizer(String),

    #[error("grid mismatch: {0}")]
    Grid(String),

    #[error("CFL condition violated: dt/dx = {ratio:.4} > 1")]
    Cfl { ratio: f64 },

    #[error("time regression: {from} -> {to}")]
    TimeRegression { from: f64, to: f64 },

    #[error("control history does not cover t - D = {needed}")]
    InsufficientHistory { needed: f64 },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
