use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is singular to working precision")]
    SingularMatrix,

    #[error("interface saddle-point system is singular (redundant constraints or inconsistent time-steps)")]
    SingularSaddleSystem,

    #[error("eigenvalue iteration did not converge within {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid Newmark parameters: {0}")]
    InvalidNewmark(String),

    #[error("invalid constraint matrix: {0}")]
    InvalidConstraint(String),

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("operation requires no subcycling, but subdomain {subdomain} has eta = {eta}")]
    SubcyclingUnsupported { subdomain: usize, eta: usize },
}
