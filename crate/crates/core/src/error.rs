use thiserror::Error;

/// Errors raised by the library. Each variant names the stage that failed so
/// callers can tag diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate velocity profile: v_i == v_next ({0})")]
    DegenerateProfile(f64),

    #[error("zero speed at first point of pair")]
    ZeroSpeedPair,

    #[error("motion without speed: both endpoint speeds are zero but d = {0} m")]
    MotionWithoutSpeed(f64),

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
