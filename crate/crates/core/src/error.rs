use thiserror::Error;

/// Errors raised by the construction, solver and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("Gram matrix Q Q^T is numerically singular (rank Q = {rank} < {expected})")]
    SingularGram { rank: usize, expected: usize },

    #[error("degenerate velocities: denominator {value:e} below 1e-12 at node {node} for entry ({row}, {col})")]
    DegenerateVelocities {
        node: usize,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error(
        "kernel iteration did not converge after {max_iter} sweeps (last update {last_update:e})"
    )]
    NoConvergence { max_iter: usize, last_update: f64 },

    #[error("singular local factor in Volterra inversion at node {node}")]
    SingularStep { node: usize },

    #[error("simulation became unstable at t = {time} (state norm {norm:e})")]
    UnstableStep { time: f64, norm: f64 },

    #[error("convergence study needs at least two grids, got {0}")]
    InsufficientGrids(usize),

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
