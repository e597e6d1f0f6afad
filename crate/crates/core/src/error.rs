use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("regularizer is singular: pivot {pivot:e} at row {row}")]
    SingularRegularizer { row: usize, pivot: f64 },

    #[error("iterative solver stopped after {iterations} iterations with relative residual {residual:e}")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("observation vector is identically zero")]
    ZeroData,

    #[error("source plane reaches the surface at node {node} (x3 = {depth})")]
    PlaneAboveSurface { node: usize, depth: f64 },

    #[error("no root: {0}")]
    NoRoot(String),

    #[error("dense oracle is limited to dimension {limit}, got {got}")]
    SizeGuard { limit: usize, got: usize },

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("sampler failed at chain position {position}: {source}")]
    Chain {
        position: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_position(self, position: usize) -> Self {
        match self {
            e @ Error::Chain { .. } => e,
            e => Error::Chain {
                position,
                source: Box::new(e),
            },
        }
    }
}
