use thiserror::Error;

/// Errors raised by the neck-analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeckError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("mode {mode} is not resolvable on a grid with {n_theta} angular samples")]
    Aliasing { mode: usize, n_theta: usize },
    #[error("piece {piece} lies outside the grid range [{lo}, {hi}]")]
    PieceOutOfRange { piece: i64, lo: i64, hi: i64 },
    #[error("input is not harmonic: sup|Δh| = {laplacian:.3e} exceeds {bound:.3e}")]
    NotHarmonic { laplacian: f64, bound: f64 },
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    ResidualTooLarge { residual: f64, tolerance: f64 },
    #[error("field leaves the target manifold: membership residual {0:.3e}")]
    OffTarget(f64),
    #[error("no convergence after {iterations} iterations (final residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("bootstrap diverged at stage {stage}: {reason}")]
    BootstrapDiverged { stage: usize, reason: String },
    #[error("window [{lo}, {hi}] is outside the grid")]
    WindowOutsideGrid { lo: f64, hi: f64 },
    #[error("io: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, NeckError>;

impl From<std::io::Error> for NeckError {
    fn from(e: std::io::Error) -> Self {
        NeckError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for NeckError {
    fn from(e: serde_json::Error) -> Self {
        NeckError::Parse(e.to_string())
    }
}
