use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("sequence length {len} exceeds DSA capacity t_max={t_max}")]
    Capacity { len: usize, t_max: usize },

    #[error("input of {len} frames is too short for the conv frontend (need at least {min})")]
    TooShort { len: usize, min: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at step {step}: loss={loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("need at least {needed} distinct points for a slope fit, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape { op, left, right }
    }

    /// True for errors caused by numerics or capacity limits rather than bad
    /// usage or I/O. The CLI maps these to a distinct exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Shape { .. }
                | Error::Capacity { .. }
                | Error::TooShort { .. }
                | Error::Divergence { .. }
                | Error::InsufficientPoints { .. }
        )
    }
}
