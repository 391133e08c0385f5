use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed textual input (preference orders, profiles, matrices).
    #[error("parse error: {0}")]
    Parse(String),

    /// Matrix or vector dimensions do not line up.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// An object or agent index outside the market.
    #[error("unknown {kind} index {index} (market has {bound})")]
    UnknownIndex {
        kind: &'static str,
        index: usize,
        bound: usize,
    },

    /// Enumeration would exceed what the count type or a configured cap
    /// can represent.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// An exhaustive cell was refused because (m!)^n exceeds the budget.
    #[error("profile budget exceeded: cell needs {needed} profiles, budget is {budget} (use force to override)")]
    BudgetExceeded { needed: u128, budget: u128 },

    /// A utility model that cannot be normalized (zero total mass).
    #[error("degenerate utility model: {0}")]
    DegenerateModel(String),

    /// Invalid experiment configuration.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A matrix that violates column feasibility or entry bounds.
    #[error("infeasible assignment: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
