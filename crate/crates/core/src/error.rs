use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid grid, family, mask or parameter configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// The family violates the monotone-stencil admissibility condition.
    #[error("admissibility error: {0}")]
    Admissibility(String),

    /// Arguments live on different grids or have the wrong length.
    #[error("usage error: {0}")]
    Usage(String),

    /// Two branch points whose difference changes sign were compared with
    /// the signed distance.
    #[error("ordering violation: difference takes both signs (min {min:.3e}, max {max:.3e})")]
    OrderingViolation { min: f64, max: f64 },

    /// An eigen iteration lost the sign of its iterate or failed to converge.
    #[error("eigen iteration failed: {0}")]
    Eigen(String),

    /// The bisection bracket does not straddle the eigenvalue.
    #[error("bracket error: {0}")]
    Bracket(String),

    /// A solve failed where the regime guarantees a solution.
    #[error("regime error: {0}")]
    Regime(String),

    /// The t* classification boundary moved non-monotonically over the ladder.
    #[error("unstable detection: {0}")]
    UnstableDetection(String),

    /// Pseudo-arclength continuation could not proceed.
    #[error("fold trace error: {0}")]
    FoldTrace(String),

    /// A check configuration does not match the requested regime.
    #[error("check configuration error: {0}")]
    Spec(String),
}

pub type Result<T> = std::result::Result<T, Error>;
