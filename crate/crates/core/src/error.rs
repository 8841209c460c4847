use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A physical quantity is outside the model's domain (non-positive
    /// thickness, supercritical set point, invalid density ratio, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-hyperbolic: {0}")]
    NonHyperbolic(String),

    #[error("degenerate eigenstructure: {0}")]
    Degenerate(String),

    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("fixed-point iteration did not converge after {iterations} iterations (last change {last_change:.3e})")]
    Iteration { iterations: usize, last_change: f64 },

    #[error("CFL violation: dt = {dt:.6e} exceeds limit {limit:.6e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("non-finite state detected at t = {t:.6}")]
    BlowUp { t: f64 },

    #[error("bound error: {0}")]
    Bound(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line front-end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_)
            | Error::Validation(_)
            | Error::Dimension(_)
            | Error::Configuration(_)
            | Error::Parse(_)
            | Error::Input(_)
            | Error::Bound(_) => 1,
            Error::NonHyperbolic(_)
            | Error::Degenerate(_)
            | Error::Consistency(_)
            | Error::Iteration { .. }
            | Error::Cfl { .. }
            | Error::BlowUp { .. }
            | Error::Io(_)
            | Error::Csv(_) => 2,
        }
    }
}
