use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("time ordering violated: t_to={t_to} must exceed t_from={t_from}")]
    Ordering { t_to: f64, t_from: f64 },
    #[error("singular bridge drift at t={t} (horizon {horizon})")]
    Singularity { t: f64, horizon: f64 },
    #[error("time {t} outside [0, {end})")]
    Range { t: f64, end: f64 },
    #[error("segment index {index} out of range for {count} segments")]
    Index { index: usize, count: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("coincident atoms {i} and {j}: gradient is singular")]
    SingularGradient { i: usize, j: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("numerical divergence at step {step}: {what}")]
    Divergence { step: usize, what: String },
}
