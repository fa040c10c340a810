use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite sample at index {index}")]
    NonFinite { index: usize },

    #[error("derivative order {0} unsupported (expected 1 or 2)")]
    DerivativeOrder(u8),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("spectral operations require a periodic grid")]
    NotPeriodic,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid too small: {0}")]
    GridTooSmall(String),

    #[error("{what} did not converge after {iterations} iterations (last residual {residual:e})")]
    NotConverged {
        what: String,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("norm blow-up detected during {0}")]
    Collapse(String),

    #[error("profile falls below the floor inside the window [{lo}, {hi}]")]
    ProfileFloor { lo: f64, hi: f64 },

    #[error("non-finite state at step {step}")]
    NanAtStep { step: u64 },

    #[error("empty support mask")]
    EmptyMask,

    #[error("support masks of neighbouring snapshots do not overlap (snapshot {0})")]
    MaskMismatch(usize),

    #[error("negative amplitude at index {0}")]
    NegativeAmplitude(usize),

    #[error("probe x = {x} lies outside the grid")]
    ProbeOutside { x: f64 },

    #[error("probe x = {x} lies inside the well (x_edge = {x_edge})")]
    InsideWell { x: f64, x_edge: f64 },

    #[error("non-Hermitian artifact: imaginary part {0:e}")]
    NonHermitian(f64),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("stability integral below floor: {0:e}")]
    DegenerateStability(f64),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
