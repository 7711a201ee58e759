use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix size n = {0} is out of range (supported: 1..={max})", max = crate::tensor::MAX_N)]
    SizeOutOfRange(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("transform matrix {name} is ill-conditioned (condition estimate {cond:.3e})")]
    IllConditioned { name: &'static str, cond: f64 },

    #[error("input vector is not normalized (x^T x = {0})")]
    NotNormalized(f64),

    #[error("invalid training item: {0}")]
    InvalidItem(String),

    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),

    #[error("weight file: {0}")]
    WeightFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
