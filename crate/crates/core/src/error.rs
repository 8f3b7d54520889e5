use std::path::PathBuf;

/// Errors produced anywhere in the training, sampling and evaluation stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("singular map: scale {scale:.3e} for class {class} is below tolerance {tol:.0e}")]
    SingularMap { class: usize, scale: f64, tol: f64 },

    #[error("score singularity at t={t}: denominator {denom:.3e}")]
    ScoreSingularity { t: f64, denom: f64 },

    #[error("pole at t={t} for collapse case {case}")]
    Pole { case: &'static str, t: f64 },

    #[error("non-finite gradient in parameter group `{group}` (array `{array}`)")]
    NonFiniteGradient { group: String, array: String },

    #[error("non-finite state at sampler step {step}")]
    SamplerDiverged { step: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
