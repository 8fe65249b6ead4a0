use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// A variable was handed a gradient after it had already propagated.
    #[error("double backward through variable #{0}")]
    DoubleBackward(usize),

    /// A function node produced a gradient that does not match its input.
    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("training diverged at step {step} (loss = {loss})")]
    Divergence { step: usize, loss: f64 },

    #[error("objective is not finite: {0}")]
    Evaluation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
