//! Error type shared by all nflab modules.

use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid must have an even number of points per axis, at least 4 (got {0})")]
    BadGrid(usize),

    #[error("director magnitude {value:.3e} at grid index {index} is at or below the degenerate threshold {threshold:.3e}")]
    ZeroDirector {
        index: usize,
        value: f64,
        threshold: f64,
    },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("heat propagator requires a nonnegative time, got {0}")]
    NegativeTime(f64),

    #[error("blow-up detected at t = {time}: {reason}")]
    BlowUpDetected { time: f64, reason: String },

    #[error("diagnostic needs at least {needed} saved states, trajectory has {got}")]
    InsufficientSaves { needed: usize, got: usize },

    #[error("ball radius {radius} exceeds half the box side {half_side}")]
    RadiusTooLarge { radius: f64, half_side: f64 },

    #[error("cylinder time range [{t_lo}, {t_hi}] is not covered by the saved states [{data_lo}, {data_hi}]")]
    CylinderOutsideData {
        t_lo: f64,
        t_hi: f64,
        data_lo: f64,
        data_hi: f64,
    },

    #[error("test function must be nonnegative, found {0:.3e}")]
    PhiNegative(f64),

    #[error("test function support violates the required cutoff: {0}")]
    PhiNotSupported(String),

    #[error("cutoff profile out of range: {0}")]
    PhiOutOfRange(String),

    #[error("space-time lattice has {points} points, above the cost cap {cap}")]
    GridTooLarge { points: usize, cap: usize },

    #[error("decay fit needs at least a decade of time past the transient, have [{t_lo}, {t_hi}]")]
    InsufficientTimeSpan { t_lo: f64, t_hi: f64 },

    #[error("rescale factor {lambda} is incompatible with regrid mode `{mode}`: {reason}")]
    IncompatibleLambda {
        lambda: f64,
        mode: String,
        reason: String,
    },

    #[error("unknown diagnostic `{0}`")]
    UnknownDiagnostic(String),

    #[error("corrupt field file: {0}")]
    FileCorrupt(String),

    #[error("state violates an invariant: {0}")]
    InvalidState(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
