use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum HsError {
    #[error("triple is not hypersymplectic at grid index {index} (margin {margin:.3e})")]
    NotHypersymplectic { index: usize, margin: f64 },

    #[error("base matrix is singular")]
    SingularBase,

    #[error("metric is degenerate at grid index {index}")]
    DegenerateMetric { index: usize },

    #[error("stability loss at t = {t}: hypersymplectic margin {margin:.3e} below threshold")]
    StabilityLoss { t: f64, margin: f64 },

    #[error("diagnostics records arrived out of time order")]
    OutOfOrder,

    #[error("not enough records for a trend report ({0} < 50)")]
    InsufficientData(usize),

    #[error("x = {x} is at or beyond the pole at {pole}")]
    DomainError { x: f64, pole: f64 },

    #[error("potential domain collapsed at x = {0}")]
    DomainCollapse(f64),

    #[error("non-constant S is not supported: alpha is no longer exact")]
    NonIntegrableAlpha,

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HsError>;
