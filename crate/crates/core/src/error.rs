use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// The discretization would need more grid intervals than allowed.
    #[error("grid needs {required} intervals, above the cap of {cap}; use a larger epsilon or a smaller r")]
    GridTooLarge { required: f64, cap: usize },

    /// The quadratic program has no feasible point.
    #[error("quadratic program is infeasible: {0}")]
    Infeasible(String),

    #[error("quadratic program is unbounded below")]
    Unbounded,
}
