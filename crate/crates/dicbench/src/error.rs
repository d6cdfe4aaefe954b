//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Evaluation point lies outside the field or interpolation domain.
    #[error("point ({x}, {y}) is outside the domain")]
    OutOfDomain { x: f64, y: f64 },

    /// Invalid parameter value (non-positive modulus, even subset size, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Image or grid dimensions unusable for the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Subset without intensity variation; correlation is undefined.
    #[error("degenerate subset: no intensity variation")]
    DegenerateSubset,

    /// Correlation peak on the search-window boundary; radius too small.
    #[error("correlation peak on the search window boundary; increase the search radius")]
    OutOfSearchRange,

    /// A configured resource cap would be exceeded.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// Aggregation over an empty or all-invalid collection.
    #[error("nothing to aggregate: {0}")]
    Empty(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("image format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
