use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty hamiltonian sample sequence")]
    EmptySequence,

    #[error("integration step {step} exceeds the allowed maximum {max}")]
    GridTooCoarse { step: f64, max: f64 },

    #[error("model {found} cannot be used here; expected {expected}")]
    ModelMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("fit window holds {points} points, at least {required} are needed")]
    InsufficientData { points: usize, required: usize },

    #[error("decay curve is not positive enough for a log fit: {0}")]
    NonPositiveCurve(String),

    #[error("regression ill-conditioned: {0}")]
    RegressionIllConditioned(String),

    #[error("quadrature did not converge: estimated error {error:e}")]
    Quadrature { error: f64 },
}
