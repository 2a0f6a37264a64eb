use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unsupported dimension {0} (only 1 and 2 are supported)")]
    UnsupportedDimension(usize),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("singular configuration: {0}")]
    Singular(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("polynomial is identically zero")]
    ZeroPolynomial,

    #[error("control barrier constraints are jointly infeasible")]
    CbfInfeasible,

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("trace shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
