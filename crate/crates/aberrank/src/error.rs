use thiserror::Error;

/// Errors surfaced by the library.
///
/// Numerical fallbacks that still produce a usable answer (for example a
/// correlation minimizer that stops short of its tolerance) are reported as
/// flags on result types, not as errors; only conditions that prevent a
/// meaningful answer land here.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// The sample has no strata.
    #[error("sample has no strata")]
    EmptySample,

    /// A stratum violates the basic shape rules.
    #[error("stratum {index}: {reason}")]
    MalformedStratum { index: usize, reason: String },

    /// A response or score is NaN or infinite.
    #[error("non-finite value at stratum {stratum}, unit {unit}")]
    NonFiniteValue { stratum: usize, unit: usize },

    /// Score vector and sample disagree on shape.
    #[error("score vector shape does not match sample (stratum {index})")]
    ShapeMismatch { index: usize },

    /// Scores must be nonnegative for the worst-case machinery.
    #[error("negative score at stratum {stratum}, unit {unit}")]
    NegativeScore { stratum: usize, unit: usize },

    /// The sensitivity parameter must satisfy Γ ≥ 1.
    #[error("gamma must be >= 1, got {0}")]
    GammaBelowOne(f64),

    /// A parameter is outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The operation requires one treated unit per stratum.
    #[error("stratum {index} has {treated} treated of {size} units; this operation needs exactly one treated unit per stratum")]
    NotOneTreated {
        index: usize,
        treated: usize,
        size: usize,
    },

    /// Exact enumeration would exceed its budget.
    #[error("enumeration budget exceeded: {detail}")]
    BudgetExceeded { detail: String },

    /// A statistic has zero variance under every feasible assignment.
    #[error("degenerate scores: statistic {which} has zero assignment variance")]
    DegenerateScores { which: usize },

    /// Worst-case p-values failed the required monotonicity-in-Γ check.
    #[error("worst-case p-value decreased from {p_lo:.6e} to {p_hi:.6e} between gamma {gamma_lo} and {gamma_hi}")]
    NonMonotonePvalue {
        gamma_lo: f64,
        gamma_hi: f64,
        p_lo: f64,
        p_hi: f64,
    },

    /// Root bracketing failed in a bisection search.
    #[error("bracketing failed: {0}")]
    BracketFailure(String),

    /// Every solver attempt failed to reach its convergence tolerance.
    #[error("solver failed to converge on every cell and restart")]
    SolverFailure,
}
