use thiserror::Error;

use crate::market::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("market spec failed validation:\n{0}")]
    Validation(ValidationReport),

    #[error("invalid config: {0}")]
    Config(#[from] serde_json::Error),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("CFL condition violated: dt = {dt:.6e} exceeds the stable limit {limit:.6e} (need nt >= {min_steps})")]
    Cfl {
        dt: f64,
        limit: f64,
        min_steps: usize,
    },

    #[error("non-finite value at time step {step} (t = {t}), node {node} (x = {x})")]
    NonFinite {
        step: usize,
        node: usize,
        t: f64,
        x: f64,
    },

    #[error("{n} agents exceed the enumeration cap of {cap}; use the root solver instead")]
    EnumerationCap { n: usize, cap: usize },

    #[error("price field does not match the market spec: {0}")]
    GridMismatch(String),

    #[error("the static market requires a constant supply")]
    NonConstantSupply,

    #[error("{clamped} of {n_paths} paths left the coefficient domain (budget is 0.1%)")]
    TooManyClamped { clamped: usize, n_paths: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
