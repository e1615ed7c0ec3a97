use thiserror::Error;

/// Errors raised by the lab's operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("range error: {0}")]
    Range(String),
    #[error("no grid point lies inside the ball of radius {radius} around {center:?}")]
    EmptyBall { center: Vec<f64>, radius: f64 },
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),
    #[error("coefficient kind admits no closed-form reduction: {0}")]
    UnsupportedCoefficient(String),
    #[error("radius ladder has no admissible radius: {0}")]
    EmptyLadder(String),
    #[error("zero denominator: {0}")]
    ZeroDenominator(String),
    #[error("solver did not converge within {max_iter} sweeps (residual {residual:e}, target {target:e})")]
    NonConvergence { max_iter: usize, residual: f64, target: f64 },
    #[error("invalid obstacle: {0}")]
    InvalidObstacle(String),
    #[error("invalid measure data: {0}")]
    InvalidMeasure(String),
    #[error("the radial solution is singular at the origin")]
    OriginSingularity,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("lambda grid is empty")]
    EmptyLambdaGrid,
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn range_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Range(msg.into()))
}
