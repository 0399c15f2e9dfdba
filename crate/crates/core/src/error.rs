use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("point {point:?} lies outside the grid cube [-{extent}, {extent}]^d")]
    OutOfDomain { point: Vec<f64>, extent: f64 },

    #[error("point {point:?} is closer than one stencil step to the cube boundary")]
    Stencil { point: Vec<f64> },

    #[error("ball of radius {radius} at {center:?} (plus margin {margin}) leaves the grid cube")]
    InvalidWindow { center: Vec<f64>, radius: f64, margin: f64 },

    #[error("radius {radius} is below the resolution floor {floor}")]
    Resolution { radius: f64, floor: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("harmonic solve did not converge after {iterations} sweeps (max residual {residual:e})")]
    SolverFailure { iterations: usize, residual: f64 },

    #[error("measure has no mass in the closed ball of radius {radius} at {center:?}")]
    EmptyMeasure { center: Vec<f64>, radius: f64 },

    #[error("brute-force oracle limited to {max_points} points and d <= 3, got {points} points in d = {dim}")]
    OracleScope {
        points: usize,
        dim: usize,
        max_points: usize,
    },

    #[error("field format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
