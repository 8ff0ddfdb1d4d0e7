use thiserror::Error;

/// Errors produced by the selection, geometry and diagnostics routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("singular Gram block {block}: smallest eigenvalue {min_eigenvalue:.3e}")]
    Singular { block: String, min_eigenvalue: f64 },

    #[error("enumeration budget exceeded: {count} subsets > budget {budget}; {hint}")]
    BudgetExceeded {
        count: u128,
        budget: u128,
        hint: String,
    },

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("infeasible model: {message} (feasible maximum {feasible_max:.6e})")]
    Infeasible { message: String, feasible_max: f64 },

    #[error("rank-deficient design: {message} (condition number {condition:.3e})")]
    RankDeficient { message: String, condition: f64 },

    #[error("config error at key `{key}`: {message}")]
    Config { key: String, message: String },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn assumption(msg: impl Into<String>) -> Self {
        Error::Assumption(msg.into())
    }

    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: msg.into(),
        }
    }

    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Validation(_) => "validation",
            Error::Dimension { .. } => "dimension",
            Error::Singular { .. } => "singular",
            Error::BudgetExceeded { .. } => "budget",
            Error::Assumption(_) => "assumption",
            Error::Infeasible { .. } => "infeasible",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::Config { .. } => "config",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
