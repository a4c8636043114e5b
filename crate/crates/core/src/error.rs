use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("site count {n} out of range 1..={max}")]
    SiteCountOutOfRange { n: usize, max: usize },

    #[error("site {site} out of range 1..={n_sites}")]
    SiteOutOfRange { site: usize, n_sites: usize },

    #[error("invalid site set: {0}")]
    InvalidSiteSet(String),

    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("operator maps configuration {config:#b} outside the constrained space")]
    LeavesConstrainedSpace { config: u64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("operator is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("eigensolver failed to converge")]
    EigenSolver,

    #[error("too few levels: need {needed}, got {got}")]
    TooFewLevels { needed: usize, got: usize },

    #[error("energy {energy} outside spectrum [{lo}, {hi}]")]
    EnergyOutOfRange { energy: f64, lo: f64, hi: f64 },

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("crossover undefined: {0}")]
    CrossoverUndefined(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
