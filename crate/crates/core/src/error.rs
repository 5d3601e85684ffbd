use thiserror::Error;

/// Errors raised by mesh construction, discretization and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry in cell {cell}: {reason}")]
    Geometry { cell: usize, reason: String },

    #[error("unsupported polynomial degree {0} (supported: 1..=6)")]
    UnsupportedDegree(usize),

    #[error("unsupported quadrature order {0} (supported: 1..=15)")]
    UnsupportedOrder(usize),

    #[error("malformed mesh file, line {line}: {reason}")]
    MeshFormat { line: usize, reason: String },

    #[error("local solver singular on cell {cell}; check alpha1 > |w|/2 and beta1, beta2 > 0")]
    SingularLocal { cell: usize },

    #[error("global system singular at pivot {pivot} of {size}: {hint}")]
    SingularSystem { pivot: usize, size: usize, hint: &'static str },

    #[error("linear solve residual {residual:e} exceeds tolerance {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },

    #[error("stabilization violated: alpha1 = {alpha1} must exceed sup|w|/2 = {bound}")]
    Stabilization { alpha1: f64, bound: f64 },

    #[error("invalid physical parameters: {0}")]
    Params(String),

    #[error("field evaluated at the singular point of case {0}")]
    Domain(&'static str),

    #[error("inconsistent assembly input: {0}")]
    Assembly(String),

    #[error("Picard iteration did not converge in {iterations} iterations (last change {last_change:e})")]
    NotConverged { iterations: usize, last_change: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
