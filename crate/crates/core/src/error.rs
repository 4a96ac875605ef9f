use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoflowError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("point is off the target manifold (defect {defect:e})")]
    OffManifold { defect: f64 },

    #[error("chart domain violated: {0}")]
    ChartDomain(String),

    #[error("point left the tubular neighbourhood (distance {distance:e} >= radius {radius:e})")]
    OutsideTube { distance: f64, radius: f64 },

    #[error("Picard iteration did not contract after {iterations} iterations ({reason}); try a smaller t_final")]
    NoContraction { iterations: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, GeoflowError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(GeoflowError::InvalidArgument(msg.into()))
}

pub(crate) fn unsupported<T>(msg: impl Into<String>) -> Result<T> {
    Err(GeoflowError::Unsupported(msg.into()))
}
