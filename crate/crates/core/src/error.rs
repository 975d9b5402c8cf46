use thiserror::Error;

/// Errors produced by design construction, optimization, and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the admissible domain of a link or family.
    #[error("domain error: {0}")]
    Domain(String),

    /// A custom family or link was declared without the required hook.
    #[error("custom family/link requires nu and nu_prime hooks")]
    MissingHook,

    /// A matrix that must have full rank is rank-deficient.
    #[error("rank error: {0}")]
    Rank(String),

    /// A design weight violates the requirements of an operation.
    #[error("weight error: {0}")]
    Weight(String),

    /// The information matrix of a design is singular where it must not be.
    #[error("singular information matrix: {0}")]
    Singular(String),

    /// A lift-one direction carries no information (A = B = 0).
    #[error("degenerate direction: no information along this coordinate")]
    Degenerate,

    /// No feasible (nonsingular) design exists or could be constructed.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// An iteration cap was reached before the convergence test held.
    #[error("no convergence after {0} iterations")]
    NonConvergence(usize),

    /// The predictor basis is not differentiable in a continuous factor.
    #[error("non-differentiable basis term in continuous factor {0}")]
    NonDifferentiable(usize),

    /// A sampling allocation cannot be met by the population.
    #[error("allocation error: {0}")]
    Allocation(String),

    /// A maximum-likelihood fit diverged (complete or quasi-complete separation).
    #[error("separation detected: coefficient norm {0:.3e} exceeds threshold")]
    Separation(f64),

    /// An input violates a structural invariant.
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
