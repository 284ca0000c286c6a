use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Dimension, size or shape outside what the library supports.
    #[error("unsupported instance: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration is not stable at site {0}")]
    NotStable(usize),

    #[error("configuration is not recurrent ({burnt} of {total} sites burn)")]
    NotRecurrent { burnt: usize, total: usize },

    #[error("not an intermediate configuration: {0}")]
    NotIntermediate(String),

    #[error("not a spanning forest: {0}")]
    NotSpanningForest(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("exact arithmetic requested on {sites} sites (limit {limit})")]
    ExactTooLarge { sites: usize, limit: usize },

    #[error("random walk exceeded step cap of {0}")]
    StepCap(u64),

    #[error("resource guard: {0}")]
    ResourceGuard(String),

    #[error("degenerate statistics: {0}")]
    Degenerate(String),

    /// A per-sample identity that must hold exactly was violated.
    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;
