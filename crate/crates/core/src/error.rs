use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid render config: {0}")]
    InvalidConfig(String),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("image size mismatch: {left:?} vs {right:?}")]
    SizeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("tape does not match the supplied scene: {0}")]
    TapeMismatch(String),
    #[error("optimization diverged at iteration {iteration}: loss {loss} vs initial {initial}")]
    Diverged { iteration: usize, loss: f64, initial: f64 },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("fit observer failed: {0}")]
    Observer(String),
}

pub type Result<T> = std::result::Result<T, Error>;
