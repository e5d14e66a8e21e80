use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected q = {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("exact expansion of {requested} atoms exceeds the budget of {budget}")]
    BudgetExceeded { requested: usize, budget: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("tree of {nodes} nodes exceeds the node budget {budget}")]
    NodeBudget { nodes: usize, budget: usize },

    #[error("recovery failed: {0}")]
    Recovery(String),

    #[error("{0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
