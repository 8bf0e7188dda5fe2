use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("proximal solve did not converge after {iterations} iterations (gradient norm {residual:e})")]
    ProxNotConverged { iterations: usize, residual: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    /// `‖B⁻¹ s‖ = 0` while forming the q statistic; the iterate did not move.
    #[error("degenerate step: previous iterate difference is zero")]
    DegenerateStep,

    #[error("line search failed after {reductions} reductions")]
    LineSearchFailed { reductions: usize },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn in_round(self, round: usize) -> Self {
        match self {
            e @ Error::Round { .. } => e,
            other => Error::Round {
                round,
                source: Box::new(other),
            },
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
