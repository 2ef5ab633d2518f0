//! Sensitivity analysis for treatment effects on aberrant outcomes in
//! matched observational studies.
//!
//! An outcome is *aberrant* when it falls in a designated bad region, such as
//! a height-for-age z-score at or below -2. Given a matched sample (strata of
//! one treated unit and one or more controls, or the reverse under full
//! matching), this crate answers the question: how strong would hidden bias in
//! treatment assignment have to be to explain away the observed excess of
//! aberrant outcomes among the treated?
//!
//! Hidden bias is parameterized by Γ ≥ 1, the maximal odds ratio of treatment
//! assignment between two units in the same stratum. For each Γ the crate
//! computes the worst-case p-value over all confounder configurations, and the
//! *sensitivity value*: the Γ at which that worst case first crosses the
//! chosen level α.
//!
//! The pieces:
//!
//! - [`sample`]: the matched-sample data model, aberrant-set definitions, and
//!   score construction (aberration indicators and aberrant ranks).
//! - [`senstests`]: worst-case bounds for the Mantel-Haenszel test and for
//!   general nonnegative-score statistics via asymptotic separability, exact
//!   randomization p-values, a brute-force worst-case oracle for tiny
//!   instances, and the sensitivity-value search.
//! - [`adaptive`]: the two-stage-programming adaptive test that combines two
//!   component statistics, its Bonferroni baseline, the Slepian critical
//!   value, and the worst-case rejection level α*.
//! - [`designsens`]: design sensitivities (the Γ threshold where power
//!   transitions from 1 to 0 as the sample grows) by Monte-Carlo bisection.
//! - [`simlab`]: data generators for the standard evaluation models and
//!   power/size simulation harnesses.
//!
//! All randomized computations take explicit seeds and use per-replication
//! substreams, so results are reproducible bit-for-bit regardless of thread
//! count.

pub mod adaptive;
pub mod designsens;
mod error;
pub mod normal;
pub mod sample;
pub mod senstests;
pub mod simlab;
pub(crate) mod solver;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
