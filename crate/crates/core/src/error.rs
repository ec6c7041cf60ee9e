use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("malformed topology: {0}")]
    Topology(String),

    #[error("no connected graph found within {budget} attempts")]
    Disconnected { budget: u32 },

    #[error("node {node} has no neighbors and self-inclusion is disabled")]
    IsolatedNode { node: usize },

    #[error("non-finite state at t = {t}, node {node} ({field}); reduce beta relative to the node degree")]
    Diverged {
        t: usize,
        node: usize,
        field: &'static str,
    },

    #[error("run did not satisfy the stopping rule within {max_iters} iterations")]
    NotConverged { max_iters: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("instance too large for enumeration: n = {n} exceeds {max}")]
    TooLarge { n: usize, max: usize },

    #[error("quadrature did not reach tolerance {tol:e} (estimated error {estimate:e})")]
    Quadrature { tol: f64, estimate: f64 },

    #[error("density vanishes at the requested quantile")]
    VanishingDensity,

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input rather than a failed computation.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Param(_)
                | Error::Topology(_)
                | Error::Config(_)
                | Error::Json(_)
                | Error::LengthMismatch { .. }
                | Error::TooLarge { .. }
        )
    }
}
