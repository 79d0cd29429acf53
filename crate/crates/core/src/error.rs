use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("element {element} is inverted (J = {jacobian:e})")]
    ElementInversion { element: usize, jacobian: f64 },

    #[error("zero diagonal entry in row {row}")]
    ZeroDiagonal { row: usize },

    #[error("zero pivot in row {row} during incomplete factorization")]
    ZeroPivot { row: usize },

    #[error("linear solver failed: {0}")]
    LinearSolver(String),

    #[error("Newton iteration did not converge at step {step} after {iterations} iterations (|R| = {residual:e})")]
    NewtonNotConverged {
        step: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
