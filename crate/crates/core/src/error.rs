use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("integration failed near x = {x}: {reason}")]
    Integration { x: f64, reason: String },

    #[error("x = {x} lies outside the cells covered by the coupling vector")]
    OutOfRange { x: f64 },

    #[error("no coupling constant connects the requested phases")]
    NotFound,

    #[error("phase branch is ambiguous: reachable range {width} exceeds the torus length {period}")]
    BranchAmbiguity { width: f64, period: f64 },

    #[error("eigenvalue tracking failed: {0}")]
    Tracking(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
