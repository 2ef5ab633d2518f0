//! Two-stage adaptive sensitivity test combining two score statistics.
//!
//! Given a matched sample, two candidate score vectors (say, an aberrance
//! indicator and aberrant ranks), a sensitivity parameter `gamma`, and a
//! level `alpha`, the test rejects when every assignment distribution the
//! sensitivity model allows leaves at least one of the two statistics
//! significantly large in its observed direction:
//!
//! 1. [`minimize_correlation`] finds the smallest correlation `rho*` the two
//!    statistics can have over the allowed distributions;
//! 2. [`joint_quantile`] turns `rho*` into the bivariate-normal critical
//!    value `Q` with `P(X1 <= Q, X2 <= Q) = 1 - alpha` (by normal-bound
//!    monotonicity in the correlation, using `rho*` is conservative);
//! 3. [`minimax_feasibility`] minimizes, over the same distributions, the
//!    larger of the statistics' direction-consistent quadratic margins
//!    `(t_k - mu_k)^2 - Q^2 sigma_k^2`; the test rejects when that minimum
//!    `y*` is nonnegative.
//!
//! [`adaptive_test`] runs the three stages; [`adaptive_test_full_matching`]
//! extends them to samples mixing one-treated and one-control strata.
//! [`bonferroni_test`] is the classical two-test baseline the adaptive
//! procedure dominates, and [`adaptive_alpha_star`] reports the smallest
//! level at which the adaptive test rejects.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::normal;
use crate::sample::{validate, MatchedSample, ScoreVector};
use crate::senstests::separability_worst_case;
use crate::{Error, Result};

pub mod bvn;
pub(crate) mod cells;

pub use bvn::{joint_quantile, orthant_probability};
pub use cells::NEG_SENTINEL;

use cells::{cell_feasible, solve_cell, Engine, Feasibility};

/// Fixed seed behind the randomized multi-starts of the correlation
/// minimization, so repeated runs see identical starting points.
const MULTISTART_SEED: u64 = 1_000_003;

/// Smallest level the root search for `alpha*` will resolve.
const ALPHA_LO: f64 = 1e-6;
/// Largest level below the one-half sentinel.
const ALPHA_HI: f64 = 0.5 - 1e-6;

/// A matched sample with two candidate score vectors and the test's
/// sensitivity and level parameters.
#[derive(Clone, Debug)]
pub struct AdaptiveProblem {
    pub sample: MatchedSample,
    pub scores1: ScoreVector,
    pub scores2: ScoreVector,
    pub gamma: f64,
    pub alpha: f64,
}

impl AdaptiveProblem {
    /// Validates the sample, score alignment, and parameter domains. The
    /// bivariate critical value is positive only for `alpha < 1/2`, so
    /// levels at or above one half are rejected here.
    pub fn new(
        sample: MatchedSample,
        scores1: ScoreVector,
        scores2: ScoreVector,
        gamma: f64,
        alpha: f64,
    ) -> Result<AdaptiveProblem> {
        validate(&sample)?;
        scores1.check_alignment(&sample)?;
        scores2.check_alignment(&sample)?;
        if !(gamma >= 1.0) {
            return Err(Error::GammaBelowOne(gamma));
        }
        if !(alpha > 0.0 && alpha < 0.5) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 0.5), got {alpha}"
            )));
        }
        Ok(AdaptiveProblem {
            sample,
            scores1,
            scores2,
            gamma,
            alpha,
        })
    }
}

/// Per-unit treatment-assignment probabilities, one simplex per stratum.
///
/// Built from box weights `w_ij in [1, gamma]` as `p_ij = w_ij / sum_j'
/// w_ij'`; the per-stratum auxiliary `s_i = 1 / sum_j' w_ij'` then brackets
/// every probability as `s_i <= p_ij <= gamma * s_i`. One-control strata
/// use weights in `[1/gamma, 1]`, which rescale to the same probability
/// sets, so a single constructor serves both orientations.
#[derive(Clone, Debug)]
pub struct AssignmentProbabilities {
    probs: Vec<Vec<f64>>,
    aux: Vec<f64>,
}

impl AssignmentProbabilities {
    /// Equal probabilities `1/n_i` within every stratum.
    pub fn uniform(sample: &MatchedSample) -> AssignmentProbabilities {
        let mut probs = Vec::with_capacity(sample.n_strata());
        let mut aux = Vec::with_capacity(sample.n_strata());
        for stratum in &sample.strata {
            let n = stratum.size();
            probs.push(vec![1.0 / n as f64; n]);
            aux.push(1.0 / n as f64);
        }
        AssignmentProbabilities { probs, aux }
    }

    /// Normalizes per-stratum weights from the box `[1, gamma]`.
    pub fn from_weights(weights: &[Vec<f64>], gamma: f64) -> Result<AssignmentProbabilities> {
        if !(gamma >= 1.0) {
            return Err(Error::GammaBelowOne(gamma));
        }
        if weights.is_empty() {
            return Err(Error::EmptySample);
        }
        let mut probs = Vec::with_capacity(weights.len());
        let mut aux = Vec::with_capacity(weights.len());
        for (i, row) in weights.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::MalformedStratum {
                    index: i,
                    reason: "has no weights".into(),
                });
            }
            let mut sum = 0.0;
            for &w in row {
                if !w.is_finite() || w < 1.0 - 1e-12 || w > gamma * (1.0 + 1e-12) {
                    return Err(Error::InvalidParameter(format!(
                        "weight {w} in stratum {i} lies outside [1, {gamma}]"
                    )));
                }
                sum += w;
            }
            probs.push(row.iter().map(|&w| w / sum).collect());
            aux.push(1.0 / sum);
        }
        Ok(AssignmentProbabilities { probs, aux })
    }

    pub fn n_strata(&self) -> usize {
        self.probs.len()
    }

    pub fn stratum(&self, i: usize) -> &[f64] {
        &self.probs[i]
    }

    /// The stratum's reciprocal weight sum; probabilities lie in
    /// `[auxiliary, gamma * auxiliary]`.
    pub fn auxiliary(&self, i: usize) -> f64 {
        self.aux[i]
    }

    pub fn probabilities(&self) -> &[Vec<f64>] {
        &self.probs
    }
}

/// Correlation of the two score statistics when, independently across
/// strata, one unit per stratum is selected with the given probabilities.
///
/// Errors with [`Error::DegenerateScores`] when either statistic has zero
/// variance under the given probabilities.
pub fn correlation_rho(
    probs: &AssignmentProbabilities,
    scores1: &ScoreVector,
    scores2: &ScoreVector,
) -> Result<f64> {
    for scores in [scores1, scores2] {
        if scores.n_strata() != probs.n_strata() {
            return Err(Error::ShapeMismatch {
                index: scores.n_strata().min(probs.n_strata()),
            });
        }
    }
    let mut var = [0.0f64; 2];
    let mut cov = 0.0f64;
    for i in 0..probs.n_strata() {
        let p = probs.stratum(i);
        let q1 = scores1.stratum(i);
        let q2 = scores2.stratum(i);
        if q1.len() != p.len() || q2.len() != p.len() {
            return Err(Error::ShapeMismatch { index: i });
        }
        let (mut m1, mut m2, mut e11, mut e22, mut e12) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for j in 0..p.len() {
            m1 += p[j] * q1[j];
            m2 += p[j] * q2[j];
            e11 += p[j] * q1[j] * q1[j];
            e22 += p[j] * q2[j] * q2[j];
            e12 += p[j] * q1[j] * q2[j];
        }
        var[0] += (e11 - m1 * m1).max(0.0);
        var[1] += (e22 - m2 * m2).max(0.0);
        cov += e12 - m1 * m2;
    }
    for (k, v) in var.iter().enumerate() {
        if *v <= 0.0 {
            return Err(Error::DegenerateScores { which: k + 1 });
        }
    }
    Ok((cov / (var[0].sqrt() * var[1].sqrt())).clamp(-1.0, 1.0))
}

/// Smallest achievable correlation, with a convergence flag.
///
/// `converged == false` means no multi-start run met the optimizer's
/// tolerance; the reported value is still the best one seen, which errs low
/// and therefore only enlarges the critical value downstream.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RhoStar {
    pub value: f64,
    pub converged: bool,
}

/// Minimizes the statistics' correlation over all assignment distributions
/// allowed at the problem's `gamma`.
///
/// Multi-start bounded quasi-Newton from five points: the three constant
/// weight vectors `1`, `gamma`, `sqrt(gamma)` (all mapping to uniform
/// probabilities) and two seeded uniform draws from the box. At `gamma = 1`
/// the box is a single point and the uniform-probability value is returned
/// exactly.
pub fn minimize_correlation(problem: &AdaptiveProblem) -> Result<RhoStar> {
    let mut engine = Engine::from_sample(
        &problem.sample,
        &problem.scores1,
        &problem.scores2,
        problem.gamma,
        true,
    )?;
    minimize_rho(&mut engine)
}

fn minimize_rho(engine: &mut Engine) -> Result<RhoStar> {
    for k in 0..2 {
        if engine.degenerate[k] {
            return Err(Error::DegenerateScores { which: k + 1 });
        }
    }
    let n = engine.n_units();
    if engine.gamma == 1.0 {
        let value = engine.rho(&vec![1.0; n], None).clamp(-1.0, 1.0);
        return Ok(RhoStar {
            value,
            converged: true,
        });
    }
    let gamma = engine.gamma;
    let mut starts = vec![vec![1.0; n], vec![gamma; n], vec![gamma.sqrt(); n]];
    let mut rng = ChaCha8Rng::seed_from_u64(MULTISTART_SEED);
    for _ in 0..2 {
        starts.push((0..n).map(|_| rng.random_range(1.0..=gamma)).collect());
    }
    let lo = vec![1.0; n];
    let hi = vec![gamma; n];
    // The correlation is flat near its optimum on these boxes; a 1e-7
    // residual already pins rho* far below the 1e-4 monotonicity scale the
    // downstream quantile cares about, while much tighter tolerances just
    // exhaust the iteration budget.
    let opts = crate::solver::SolveOptions {
        max_iter: 300,
        kkt_tol: 1e-7,
    };
    let mut best = f64::INFINITY;
    let mut any_converged = false;
    for start in &starts {
        best = best.min(engine.rho(start, None));
        let sol = crate::solver::minimize_box(|x, g| engine.rho(x, Some(g)), start, &lo, &hi, &opts);
        best = best.min(engine.rho(&sol.x, None));
        any_converged |= sol.converged;
    }
    Ok(RhoStar {
        value: best.clamp(-1.0, 1.0),
        converged: any_converged,
    })
}

/// How one sign cell of the minimax program was resolved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CellStatus {
    /// The cell's sign region does not meet the assignment polytope.
    Infeasible,
    /// Convex solve met its tolerance; `value` is the cell optimum.
    Solved,
    /// Solve finished without meeting tolerance; `value` is the best
    /// feasible evaluation found (an upper bound on the cell optimum).
    Failed,
    /// The both-wrong-way cell is feasible; it contributes the large
    /// negative sentinel instead of a solved value.
    Sentinel,
}

/// Outcome of one of the four sign cells.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CellDiagnostic {
    /// `wrong_way[k]` marks the cell that constrains statistic `k` to sit
    /// at or below its mean (and drops it from the objective).
    pub wrong_way: [bool; 2],
    pub status: CellStatus,
    /// Cell value in squared score units.
    pub value: Option<f64>,
    /// Final projected-gradient residual of the cell solve.
    pub kkt: Option<f64>,
}

/// Diagnostic flags carried by a verdict.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct AdaptiveFlags {
    /// No correlation-minimization start converged; `rho_star` is the best
    /// value seen (downward error only enlarges the critical value).
    pub rho_nonconverged: bool,
    /// Some cell evaluation floored a vanishing variance.
    pub variance_floored: bool,
    /// Some informative cell solve failed to certify the sign of the cell
    /// minimum, so the verdict came from the sign-equivalent minimax margin
    /// program instead and `y_star` is a sign-consistent sentinel.
    pub margin_fallback: bool,
}

/// Full outcome of the two-stage adaptive test.
#[derive(Clone, Debug, Serialize)]
pub struct AdaptiveVerdict {
    /// Observed statistics in score units; each stratum contributes its
    /// selected unit's score, negated in one-control strata.
    pub statistics: [f64; 2],
    pub rho_star: f64,
    /// Bivariate critical value at the problem's level.
    pub quantile: f64,
    /// Minimum over the four sign cells, in squared score units; the large
    /// negative sentinel when the both-wrong-way cell is feasible.
    pub y_star: f64,
    /// `y_star >= 0`.
    pub reject: bool,
    pub cells: [CellDiagnostic; 4],
    pub flags: AdaptiveFlags,
}

const CELL_ORDER: [[bool; 2]; 4] = [[false, false], [false, true], [true, false], [true, true]];

struct CellsOutcome {
    y_star: f64,
    cells: [CellDiagnostic; 4],
    floored: bool,
    /// Whether the sign of `y_star` is certified: either every informative
    /// cell solved cleanly, or some feasible evaluation already proves the
    /// minimum negative.
    trusted: bool,
}

fn cell_witnesses(engine: &mut Engine) -> [Option<Vec<f64>>; 4] {
    CELL_ORDER.map(|wrong| match cell_feasible(engine, wrong) {
        Feasibility::Feasible(w) => Some(w),
        Feasibility::Infeasible => None,
    })
}

fn decide_cells(
    engine: &mut Engine,
    quantile: f64,
    witnesses: &[Option<Vec<f64>>; 4],
) -> CellsOutcome {
    let scale2 = engine.scale * engine.scale;
    let n = engine.n_units();
    let mut diags = CELL_ORDER.map(|wrong| CellDiagnostic {
        wrong_way: wrong,
        status: CellStatus::Infeasible,
        value: None,
        kkt: None,
    });
    let mut upper = f64::INFINITY;
    let mut solved_all = true;
    let mut floored = false;
    for c in 0..3 {
        let Some(wit) = &witnesses[c] else { continue };
        let starts = vec![wit.clone(), vec![engine.gamma.sqrt(); n]];
        let cs = solve_cell(engine, quantile, CELL_ORDER[c], &starts);
        let value = cs.value * scale2;
        diags[c] = CellDiagnostic {
            wrong_way: CELL_ORDER[c],
            status: if cs.converged {
                CellStatus::Solved
            } else {
                CellStatus::Failed
            },
            value: Some(value),
            kkt: Some(cs.kkt),
        };
        floored |= cs.floored;
        if cs.viol <= cells::VIOL_ACCEPT {
            upper = upper.min(value);
        }
        if !cs.converged {
            solved_all = false;
        }
    }
    if witnesses[3].is_some() {
        diags[3] = CellDiagnostic {
            wrong_way: [true, true],
            status: CellStatus::Sentinel,
            value: Some(NEG_SENTINEL),
            kkt: None,
        };
        upper = NEG_SENTINEL;
    }
    let trusted = (solved_all && upper < f64::INFINITY) || upper < 0.0;
    CellsOutcome {
        y_star: upper,
        cells: diags,
        floored,
        trusted,
    }
}

/// Minimum over the four sign cells of the direction-consistent quadratic
/// margin, at an externally supplied critical value.
///
/// Each cell constrains every statistic's deviation `t_k - mu_k` to one
/// sign and minimizes the larger margin `(t_k - mu_k)^2 - quantile^2 *
/// sigma_k^2` over the statistics still pointing the observed way; the
/// both-wrong-way cell, when feasible, contributes [`NEG_SENTINEL`].
/// Errors with [`Error::SolverFailure`] when no cell resolves cleanly
/// enough to certify the sign of the minimum.
pub fn minimax_feasibility(problem: &AdaptiveProblem, quantile: f64) -> Result<f64> {
    if !(quantile > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "quantile must be positive, got {quantile}"
        )));
    }
    let mut engine = Engine::from_sample(
        &problem.sample,
        &problem.scores1,
        &problem.scores2,
        problem.gamma,
        true,
    )?;
    let witnesses = cell_witnesses(&mut engine);
    let out = decide_cells(&mut engine, quantile, &witnesses);
    if out.trusted || (0..2).any(|k| engine.certified_deviate(k) >= quantile) {
        Ok(out.y_star)
    } else {
        Err(Error::SolverFailure)
    }
}

/// Runs the two-stage adaptive test on a sample with one treated unit per
/// stratum.
pub fn adaptive_test(problem: &AdaptiveProblem) -> Result<AdaptiveVerdict> {
    run_adaptive(problem, false)
}

/// Runs the two-stage adaptive test on a sample whose strata each have one
/// treated unit or one control unit.
///
/// One-control strata enter with negated scores and the statistic adjusted
/// accordingly, which leaves all variances and correlations unchanged; on a
/// sample with no such strata the result is identical to [`adaptive_test`].
pub fn adaptive_test_full_matching(problem: &AdaptiveProblem) -> Result<AdaptiveVerdict> {
    run_adaptive(problem, true)
}

fn run_adaptive(problem: &AdaptiveProblem, allow_reversed: bool) -> Result<AdaptiveVerdict> {
    let mut engine = Engine::from_sample(
        &problem.sample,
        &problem.scores1,
        &problem.scores2,
        problem.gamma,
        allow_reversed,
    )?;
    let rho = minimize_rho(&mut engine)?;
    let quantile = joint_quantile(rho.value, problem.alpha);
    let witnesses = cell_witnesses(&mut engine);
    let out = decide_cells(&mut engine, quantile, &witnesses);
    let statistics = [engine.t[0] * engine.scale, engine.t[1] * engine.scale];
    let mut flags = AdaptiveFlags {
        rho_nonconverged: !rho.converged,
        variance_floored: out.floored,
        margin_fallback: false,
    };
    let (y_star, reject) = if out.trusted {
        (out.y_star, out.y_star >= 0.0)
    } else if (0..2).any(|k| engine.certified_deviate(k) >= quantile) {
        // A certified single-component bound forces every feasible cell's
        // minimum nonnegative, so the sign is settled even though some solve
        // did not converge; the unconverged values remain valid upper
        // bounds, so the reported minimum only errs upward.
        (out.y_star, true)
    } else {
        flags.margin_fallback = true;
        let reject = cells::gprog_reject(&mut engine, quantile);
        (if reject { f64::INFINITY } else { NEG_SENTINEL }, reject)
    };
    Ok(AdaptiveVerdict {
        statistics,
        rho_star: rho.value,
        quantile,
        y_star,
        reject,
        cells: out.cells,
        flags,
    })
}

/// Two-test Bonferroni baseline: rejects when either statistic's worst-case
/// deviate reaches the `1 - alpha/2` normal quantile.
pub fn bonferroni_test(problem: &AdaptiveProblem) -> Result<bool> {
    let crit = normal::quantile(1.0 - problem.alpha / 2.0);
    let wc1 = separability_worst_case(&problem.sample, &problem.scores1, problem.gamma)?;
    let wc2 = separability_worst_case(&problem.sample, &problem.scores2, problem.gamma)?;
    Ok(wc1.deviate.max(wc2.deviate) >= crit)
}

/// Rejection decision of the two-stage test through the single minimax
/// margin program `min_w max_k (t_k - mu_k - Q sigma_k)` instead of the
/// four-cell enumeration. The two formulations agree in sign, and this one
/// skips the per-cell bookkeeping, so the simulation loops call it once per
/// replication and gamma.
pub(crate) fn fast_adaptive_reject(
    sample: &MatchedSample,
    scores1: &ScoreVector,
    scores2: &ScoreVector,
    gamma: f64,
    alpha: f64,
) -> Result<bool> {
    let mut engine = Engine::from_sample(sample, scores1, scores2, gamma, false)?;
    for k in 0..2 {
        if engine.degenerate[k] {
            return Err(Error::DegenerateScores { which: k + 1 });
        }
    }
    // Two screens bracket the joint critical value Q, which always lies in
    // [z_alpha, z_{alpha/2}], and often settle the verdict before the
    // correlation stage runs. A component significant at the Bonferroni
    // level stays significant at Q (the dominance the adaptive test is
    // built on), and a witness assignment whose margin is negative already
    // at z_alpha certifies a negative minimum at the larger Q.
    let z_half = normal::quantile(1.0 - alpha / 2.0);
    if engine.worst_deviate(0) >= z_half || engine.worst_deviate(1) >= z_half {
        return Ok(true);
    }
    let z_single = normal::quantile(1.0 - alpha);
    if engine.witness_margin(z_single) < 0.0 {
        return Ok(false);
    }
    let rho = minimize_rho(&mut engine)?;
    let quantile = joint_quantile(rho.value, alpha);
    Ok(cells::gprog_reject(&mut engine, quantile))
}

/// Same margin program at a caller-fixed critical value, bypassing the
/// correlation stage. With `quantile = Phi^-1(1 - alpha/2)` this is the
/// one-sided minimax combination test.
pub(crate) fn fast_minimax_reject(
    sample: &MatchedSample,
    scores1: &ScoreVector,
    scores2: &ScoreVector,
    gamma: f64,
    quantile: f64,
) -> Result<bool> {
    let mut engine = Engine::from_sample(sample, scores1, scores2, gamma, false)?;
    if engine.worst_deviate(0) >= quantile || engine.worst_deviate(1) >= quantile {
        return Ok(true);
    }
    Ok(cells::gprog_reject(&mut engine, quantile))
}

/// Smallest level at which the adaptive test rejects, by monotone root
/// search over `(1e-6, 0.5 - 1e-6)` to absolute tolerance `1e-4`.
///
/// Returns the `0.5` sentinel when no level below one half rejects, and the
/// lower endpoint when even that level rejects. The search minimizes the
/// correlation once and then queries the minimax margin program at each
/// trial level's critical value; the margin program decides the same sign
/// as the four-cell enumeration.
pub fn adaptive_alpha_star(
    sample: &MatchedSample,
    scores1: &ScoreVector,
    scores2: &ScoreVector,
    gamma: f64,
) -> Result<f64> {
    if !(gamma >= 1.0) {
        return Err(Error::GammaBelowOne(gamma));
    }
    let mut engine = Engine::from_sample(sample, scores1, scores2, gamma, true)?;
    let rho = minimize_rho(&mut engine)?;
    if engine.gamma == 1.0 {
        // Singleton assignment distribution: rejection at level alpha means
        // the larger right-direction deviate reaches the critical value, so
        // alpha* solves the orthant equation at that deviate directly.
        let n = engine.n_units();
        let mo = engine.moments(&vec![1.0; n]);
        let mut dev = f64::NEG_INFINITY;
        for k in 0..2 {
            let d = engine.t[k] - mo.mu[k];
            if d > 0.0 {
                dev = dev.max(d / mo.var[k].max(cells::VAR_FLOOR).sqrt());
            }
        }
        if dev == f64::NEG_INFINITY {
            return Ok(0.5);
        }
        let alpha = 1.0 - orthant_probability(dev, rho.value);
        return Ok(if alpha > ALPHA_HI {
            0.5
        } else {
            alpha.max(ALPHA_LO)
        });
    }
    if let Feasibility::Feasible(_) = cell_feasible(&mut engine, [true, true]) {
        // Some assignment leaves both statistics at or below their means,
        // so the margin stays negative at every positive critical value.
        return Ok(0.5);
    }
    let reject_at = |alpha: f64, engine: &mut Engine| {
        let q = joint_quantile(rho.value, alpha);
        cells::gprog_reject(engine, q)
    };
    let mut lo = ALPHA_LO;
    let mut hi = ALPHA_HI;
    if !reject_at(hi, &mut engine) {
        return Ok(0.5);
    }
    if reject_at(lo, &mut engine) {
        return Ok(ALPHA_LO);
    }
    while hi - lo > 1e-4 {
        let mid = 0.5 * (lo + hi);
        if reject_at(mid, &mut engine) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Largest value an adversary choosing assignment probabilities can force
/// the smaller of two per-pair mean differences to take.
///
/// Each matched pair contributes `d_k (2x - 1)` to statistic `k`'s mean
/// difference, where `x in [1/(1+gamma), gamma/(1+gamma)]` is the first
/// unit's treatment probability. The program `max_x min_k mean_i d_ki (2x_i
/// - 1)` equals, by minimax duality, the minimum over mixtures `lambda in
/// [0, 1]` of a separable maximum that is piecewise linear in `lambda`, so
/// scanning the sign-change breakpoints gives the exact value.
pub fn max_min_expectation(pair_diffs: &[[f64; 2]], gamma: f64) -> Result<f64> {
    if pair_diffs.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(gamma >= 1.0) {
        return Err(Error::GammaBelowOne(gamma));
    }
    if pair_diffs
        .iter()
        .any(|d| !d[0].is_finite() || !d[1].is_finite())
    {
        return Err(Error::InvalidParameter(
            "pair differences must be finite".into(),
        ));
    }
    let eta = (gamma - 1.0) / (gamma + 1.0);
    let pairs = pair_diffs.len() as f64;
    let value_at = |lambda: f64| -> f64 {
        let s: f64 = pair_diffs
            .iter()
            .map(|d| (lambda * d[0] + (1.0 - lambda) * d[1]).abs())
            .sum();
        eta * s / pairs
    };
    let mut best = value_at(0.0).min(value_at(1.0));
    for d in pair_diffs {
        let denom = d[1] - d[0];
        if denom != 0.0 {
            let lambda = d[1] / denom;
            if lambda > 0.0 && lambda < 1.0 {
                best = best.min(value_at(lambda));
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{minimize_box, smooth_max, SolveOptions};
    use approx::assert_abs_diff_eq;

    fn pair_sample(rows: &[[f64; 2]]) -> MatchedSample {
        MatchedSample::from_rows(
            rows.iter()
                .map(|r| vec![(true, r[0]), (false, r[1])])
                .collect(),
        )
    }

    fn scores(rows: Vec<Vec<f64>>) -> ScoreVector {
        ScoreVector::new(rows).unwrap()
    }

    #[test]
    fn correlation_rho_identical_scores_is_one() {
        let sample = pair_sample(&[[2.0, 0.0], [1.5, 0.3], [0.9, 2.2]]);
        let s = scores(vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![0.0, 3.0]]);
        let probs = AssignmentProbabilities::uniform(&sample);
        let rho = correlation_rho(&probs, &s, &s).unwrap();
        assert_abs_diff_eq!(rho, 1.0, epsilon = 1e-12);
        let w = vec![vec![1.4, 2.0], vec![1.0, 1.7], vec![2.0, 1.0]];
        let skew = AssignmentProbabilities::from_weights(&w, 2.0).unwrap();
        assert_abs_diff_eq!(correlation_rho(&skew, &s, &s).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn correlation_rho_negated_plus_constant_is_minus_one() {
        let sample = pair_sample(&[[2.0, 0.0], [1.5, 0.3]]);
        let s1 = scores(vec![vec![1.0, 0.0], vec![2.0, 1.0]]);
        // Per stratum: constant minus the first scores.
        let s2 = scores(vec![vec![0.0, 1.0], vec![1.0, 2.0]]);
        let probs = AssignmentProbabilities::uniform(&sample);
        assert_abs_diff_eq!(
            correlation_rho(&probs, &s1, &s2).unwrap(),
            -1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn correlation_rho_crossed_pairs_is_zero() {
        let sample = pair_sample(&[[2.0, 0.0], [1.5, 0.3]]);
        let s1 = scores(vec![vec![0.0, 1.0], vec![0.0, 1.0]]);
        let s2 = scores(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let probs = AssignmentProbabilities::uniform(&sample);
        assert_abs_diff_eq!(
            correlation_rho(&probs, &s1, &s2).unwrap(),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn correlation_rho_rejects_degenerate_scores() {
        let sample = pair_sample(&[[2.0, 0.0], [1.5, 0.3]]);
        let s1 = scores(vec![vec![1.0, 1.0], vec![2.0, 2.0]]);
        let s2 = scores(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let probs = AssignmentProbabilities::uniform(&sample);
        assert!(matches!(
            correlation_rho(&probs, &s1, &s2),
            Err(Error::DegenerateScores { which: 1 })
        ));
        assert!(matches!(
            correlation_rho(&probs, &s2, &s1),
            Err(Error::DegenerateScores { which: 2 })
        ));
    }

    #[test]
    fn assignment_probabilities_validate_and_normalize() {
        let sample = pair_sample(&[[2.0, 0.0], [1.5, 0.3]]);
        let u = AssignmentProbabilities::uniform(&sample);
        for i in 0..u.n_strata() {
            let s: f64 = u.stratum(i).iter().sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-15);
        }
        assert!(AssignmentProbabilities::from_weights(&[vec![0.5, 1.0]], 2.0).is_err());
        assert!(AssignmentProbabilities::from_weights(&[vec![1.0, 2.5]], 2.0).is_err());
        let p = AssignmentProbabilities::from_weights(&[vec![1.0, 2.0, 1.5]], 2.0).unwrap();
        let aux = p.auxiliary(0);
        for &pj in p.stratum(0) {
            assert!(pj >= aux - 1e-15 && pj <= 2.0 * aux + 1e-15);
        }
    }

    #[test]
    fn minimize_correlation_gamma_one_returns_uniform_value() {
        let sample = pair_sample(&[[2.0, 0.0], [1.5, 0.3], [0.1, 0.9]]);
        let s1 = scores(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]);
        let s2 = scores(vec![vec![2.0, 0.0], vec![1.0, 3.0], vec![0.0, 1.0]]);
        let problem = AdaptiveProblem::new(sample.clone(), s1.clone(), s2.clone(), 1.0, 0.05).unwrap();
        let rs = minimize_correlation(&problem).unwrap();
        assert!(rs.converged);
        let direct =
            correlation_rho(&AssignmentProbabilities::uniform(&sample), &s1, &s2).unwrap();
        assert_abs_diff_eq!(rs.value, direct, epsilon = 1e-14);
    }

    #[test]
    fn minimize_correlation_identical_scores_stays_one() {
        let sample = pair_sample(&[[2.0, 0.0], [1.5, 0.3], [0.1, 0.9]]);
        let s = scores(vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![1.0, 0.5]]);
        for gamma in [1.0, 2.0, 3.5] {
            let problem =
                AdaptiveProblem::new(sample.clone(), s.clone(), s.clone(), gamma, 0.05).unwrap();
            let rs = minimize_correlation(&problem).unwrap();
            assert_abs_diff_eq!(rs.value, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn minimize_correlation_matches_dense_weight_grid() {
        // Two strata of two units, distinct scores, gamma = 2: enumerate the
        // weight box on a 0.1 lattice as an independent oracle.
        let sample = pair_sample(&[[2.0, 0.0], [1.5, 0.3]]);
        let s1 = scores(vec![vec![0.0, 1.0], vec![0.0, 1.0]]);
        let s2 = scores(vec![vec![0.0, 2.0], vec![3.0, 0.0]]);
        let problem = AdaptiveProblem::new(sample.clone(), s1.clone(), s2.clone(), 2.0, 0.05).unwrap();
        let rs = minimize_correlation(&problem).unwrap();
        assert!(rs.converged);
        let grid: Vec<f64> = (0..=10).map(|i| 1.0 + 0.1 * i as f64).collect();
        let mut oracle = f64::INFINITY;
        for &a in &grid {
            for &b in &grid {
                for &c in &grid {
                    for &d in &grid {
                        let probs = AssignmentProbabilities::from_weights(
                            &[vec![a, b], vec![c, d]],
                            2.0,
                        )
                        .unwrap();
                        oracle = oracle.min(correlation_rho(&probs, &s1, &s2).unwrap());
                    }
                }
            }
        }
        assert_abs_diff_eq!(rs.value, oracle, epsilon = 1e-3);
        assert!(rs.value <= oracle + 1e-9);
        // The optimum can be no larger than the uniform start's value.
        let uniform =
            correlation_rho(&AssignmentProbabilities::uniform(&sample), &s1, &s2).unwrap();
        assert!(rs.value <= uniform + 1e-12);
    }

    #[test]
    fn minimax_feasibility_gamma_one_matches_direct_computation() {
        // Three pair strata; at gamma = 1 the assignment distribution is
        // the single uniform point, so the value follows from the observed
        // deviation directions alone.
        let sample = pair_sample(&[[2.0, 0.0], [1.5, 0.3], [0.8, 0.1]]);
        let s1 = scores(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]]);
        let s2 = scores(vec![vec![2.0, 0.0], vec![0.0, 1.0], vec![3.0, 3.0]]);
        let problem = AdaptiveProblem::new(sample, s1, s2, 1.0, 0.05).unwrap();
        // t1 = 3, mu1 = 2, var1 = 0.5; t2 = 5, mu2 = 4.5, var2 = 1.25.
        for quantile in [1.2, 2.0] {
            let y = minimax_feasibility(&problem, quantile).unwrap();
            let f1 = 1.0 - quantile * quantile * 0.5;
            let f2 = 0.25 - quantile * quantile * 1.25;
            assert_abs_diff_eq!(y, f1.max(f2), epsilon = 1e-9);
        }
    }

    #[test]
    fn directional_guard_blocks_rejection() {
        // Treated units carry the smallest scores of both vectors, so both
        // statistics sit below their means under every assignment and the
        // both-wrong-way cell swallows the program.
        let sample = pair_sample(&[[0.1, 2.0], [0.2, 1.5]]);
        let s1 = scores(vec![vec![0.0, 1.0], vec![0.0, 2.0]]);
        let s2 = scores(vec![vec![0.0, 3.0], vec![0.0, 1.0]]);
        let problem = AdaptiveProblem::new(sample, s1, s2, 1.8, 0.05).unwrap();
        let verdict = adaptive_test(&problem).unwrap();
        assert!(!verdict.reject);
        assert_eq!(verdict.y_star, NEG_SENTINEL);
        assert_eq!(verdict.cells[3].status, CellStatus::Sentinel);
    }

    #[test]
    fn gamma_one_identical_scores_reduces_to_z_test() {
        // 6 strata of 3 units; treated unit carries the top score in most.
        let rows: Vec<Vec<(bool, f64)>> = (0..6)
            .map(|i| {
                vec![
                    (true, 2.0 + i as f64 * 0.1),
                    (false, 0.5),
                    (false, 0.2 + i as f64 * 0.05),
                ]
            })
            .collect();
        let sample = MatchedSample::from_rows(rows);
        let srows: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                if i < 5 {
                    vec![2.0, 1.0, 0.0]
                } else {
                    vec![0.0, 2.0, 1.0]
                }
            })
            .collect();
        let s = scores(srows.clone());
        // Uniform moments: mean 1 and variance 2/3 per stratum.
        let t: f64 = srows.iter().take(5).map(|r| r[0]).sum::<f64>() + srows[5][0];
        let deviate = (t - 6.0) / (6.0 * 2.0 / 3.0f64).sqrt();
        for alpha in [0.01, 0.05, 0.2, 0.4] {
            let problem =
                AdaptiveProblem::new(sample.clone(), s.clone(), s.clone(), 1.0, alpha).unwrap();
            let verdict = adaptive_test(&problem).unwrap();
            assert_abs_diff_eq!(verdict.rho_star, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(
                verdict.quantile,
                normal::quantile(1.0 - alpha),
                epsilon = 1e-8
            );
            assert_eq!(verdict.reject, deviate >= verdict.quantile);
            assert_eq!(verdict.reject, verdict.y_star >= 0.0);
        }
    }

    #[test]
    fn bonferroni_rejects_strong_signal_and_adaptive_dominates() {
        // A strongly significant sample: every treated unit is the sole
        // score carrier of both vectors.
        let sample = pair_sample(&[[3.0, 0.0]; 8]);
        let s1 = scores(vec![vec![1.0, 0.0]; 8]);
        let s2 = scores(vec![vec![2.0, 0.0]; 8]);
        let problem = AdaptiveProblem::new(sample, s1, s2, 1.0, 0.05).unwrap();
        assert!(bonferroni_test(&problem).unwrap());
        assert!(adaptive_test(&problem).unwrap().reject);
    }

    #[test]
    fn adaptive_dominates_bonferroni_on_random_instances() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut bonf_rejections = 0;
        for rep in 0..24 {
            let n_strata = 2 + rep % 4;
            let size = 2 + (rep / 4) % 3;
            let rows: Vec<Vec<(bool, f64)>> = (0..n_strata)
                .map(|_| {
                    let treated = rng.random_range(0..size);
                    (0..size)
                        .map(|j| (j == treated, rng.random_range(0.0..3.0)))
                        .collect()
                })
                .collect();
            let sample = MatchedSample::from_rows(rows);
            let draw = |rng: &mut ChaCha8Rng| -> ScoreVector {
                ScoreVector::new(
                    (0..n_strata)
                        .map(|_| (0..size).map(|_| rng.random_range(0..4) as f64).collect())
                        .collect(),
                )
                .unwrap()
            };
            let s1 = draw(&mut rng);
            let s2 = draw(&mut rng);
            for gamma in [1.0, 1.6, 2.4] {
                let problem =
                    AdaptiveProblem::new(sample.clone(), s1.clone(), s2.clone(), gamma, 0.05)
                        .unwrap();
                let verdict = match adaptive_test(&problem) {
                    Ok(v) => v,
                    Err(Error::DegenerateScores { .. }) => continue,
                    Err(e) => panic!("unexpected error: {e}"),
                };
                let bonf = bonferroni_test(&problem).unwrap();
                if bonf {
                    bonf_rejections += 1;
                    assert!(
                        verdict.reject,
                        "dominance violated at gamma {gamma} rep {rep}"
                    );
                }
                assert_eq!(verdict.reject, verdict.y_star >= 0.0);
                assert!(verdict.quantile <= normal::quantile(0.975) + 1e-9);
                assert!(!verdict.flags.margin_fallback);
            }
        }
        assert!(bonf_rejections > 0, "loop never exercised a rejection");
    }

    /// The screened margin-program path used by the simulation loops must
    /// reach the same verdicts as the four-cell test, on both sides.
    #[test]
    fn fast_path_decision_matches_the_full_test() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut rejections = 0;
        let mut acceptances = 0;
        for rep in 0..30 {
            let n_strata = 3 + rep % 5;
            let size = 2 + (rep / 5) % 3;
            let rows: Vec<Vec<(bool, f64)>> = (0..n_strata)
                .map(|_| {
                    let treated = rng.random_range(0..size);
                    (0..size)
                        .map(|j| (j == treated, rng.random_range(0.0..3.0)))
                        .collect()
                })
                .collect();
            let sample = MatchedSample::from_rows(rows);
            let draw = |rng: &mut ChaCha8Rng| -> ScoreVector {
                ScoreVector::new(
                    (0..n_strata)
                        .map(|_| (0..size).map(|_| rng.random_range(0..4) as f64).collect())
                        .collect(),
                )
                .unwrap()
            };
            let s1 = draw(&mut rng);
            let s2 = draw(&mut rng);
            for gamma in [1.0, 1.5, 2.2] {
                for alpha in [0.05, 0.2] {
                    let problem =
                        AdaptiveProblem::new(sample.clone(), s1.clone(), s2.clone(), gamma, alpha)
                            .unwrap();
                    let full = match adaptive_test(&problem) {
                        Ok(v) => v.reject,
                        Err(Error::DegenerateScores { .. }) => {
                            assert!(matches!(
                                fast_adaptive_reject(&sample, &s1, &s2, gamma, alpha),
                                Err(Error::DegenerateScores { .. })
                            ));
                            continue;
                        }
                        Err(e) => panic!("unexpected error: {e}"),
                    };
                    let fast = fast_adaptive_reject(&sample, &s1, &s2, gamma, alpha).unwrap();
                    assert_eq!(fast, full, "rep {rep} gamma {gamma} alpha {alpha}");
                    if full {
                        rejections += 1;
                    } else {
                        acceptances += 1;
                    }
                }
            }
        }
        assert!(rejections > 5 && acceptances > 5, "one-sided coverage");
    }

    #[test]
    fn alpha_star_gamma_one_identical_scores_closed_form() {
        let sample = pair_sample(&[[3.0, 0.0]; 8]);
        let s = scores(vec![vec![1.0, 0.0]; 8]);
        // t = 8, mu = 4, var = 2: deviate = 4 / sqrt(2).
        let deviate = 4.0 / 2.0f64.sqrt();
        let expected = normal::upper_tail(deviate);
        let a = adaptive_alpha_star(&sample, &s, &s, 1.0).unwrap();
        assert_abs_diff_eq!(a, expected, epsilon = 1e-9);
        // The test at levels just above and below alpha* flips.
        for (alpha, want) in [(expected + 1e-3, true), (expected - 1e-3, false)] {
            let problem =
                AdaptiveProblem::new(sample.clone(), s.clone(), s.clone(), 1.0, alpha).unwrap();
            assert_eq!(adaptive_test(&problem).unwrap().reject, want);
        }
    }

    #[test]
    fn alpha_star_agrees_with_rejection_at_level() {
        let sample = pair_sample(&[
            [3.0, 0.0],
            [2.0, 0.5],
            [1.8, 0.2],
            [2.4, 0.0],
            [0.3, 1.9],
            [2.2, 0.1],
        ]);
        let s1 = scores(vec![vec![1.0, 0.0]; 6]);
        let s2 = scores(vec![
            vec![4.0, 0.0],
            vec![2.0, 0.0],
            vec![1.0, 0.0],
            vec![3.0, 0.0],
            vec![0.0, 5.0],
            vec![6.0, 0.0],
        ]);
        for gamma in [1.0, 1.4] {
            let a = adaptive_alpha_star(&sample, &s1, &s2, gamma).unwrap();
            assert!(a < 0.5, "expected a rejecting level at gamma {gamma}");
            for (alpha, want) in [((a + 0.02).min(0.49), true), (a - 0.02, false)] {
                if alpha <= 0.0 {
                    continue;
                }
                let problem =
                    AdaptiveProblem::new(sample.clone(), s1.clone(), s2.clone(), gamma, alpha)
                        .unwrap();
                assert_eq!(
                    adaptive_test(&problem).unwrap().reject,
                    want,
                    "gamma {gamma} alpha {alpha}"
                );
            }
        }
    }

    #[test]
    fn alpha_star_nondecreasing_in_gamma_and_sentinel_when_hopeless() {
        let sample = pair_sample(&[
            [3.0, 0.0],
            [2.0, 0.5],
            [1.8, 0.2],
            [2.4, 0.0],
            [0.3, 1.9],
            [2.2, 0.1],
            [2.9, 0.4],
            [1.1, 0.6],
        ]);
        let s1 = scores(vec![vec![1.0, 0.0]; 8]);
        let s2 = scores(vec![
            vec![4.0, 0.0],
            vec![2.0, 0.0],
            vec![1.0, 0.0],
            vec![3.0, 0.0],
            vec![0.0, 5.0],
            vec![6.0, 0.0],
            vec![7.0, 0.0],
            vec![0.0, 2.0],
        ]);
        let mut prev = 0.0;
        for gamma in [1.0, 1.15, 1.3, 2.0] {
            let a = adaptive_alpha_star(&sample, &s1, &s2, gamma).unwrap();
            assert!(
                a >= prev - 2e-4,
                "alpha* fell from {prev} to {a} at gamma {gamma}"
            );
            prev = a;
        }
        // Reversed evidence never rejects at any level below one half.
        let weak = pair_sample(&[[0.0, 2.0], [0.1, 1.5]]);
        let w1 = scores(vec![vec![0.0, 1.0], vec![0.0, 1.0]]);
        let w2 = scores(vec![vec![0.0, 2.0], vec![0.0, 3.0]]);
        assert_eq!(adaptive_alpha_star(&weak, &w1, &w2, 1.5).unwrap(), 0.5);
    }

    #[test]
    fn full_matching_equals_adaptive_on_one_treated_samples() {
        let sample = pair_sample(&[[2.0, 0.0], [1.5, 0.3], [0.8, 0.1], [0.2, 1.1]]);
        let s1 = scores(vec![vec![1.0, 0.0]; 4]);
        let s2 = scores(vec![
            vec![2.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![3.0, 0.0],
        ]);
        let problem = AdaptiveProblem::new(sample, s1, s2, 1.7, 0.05).unwrap();
        let a = adaptive_test(&problem).unwrap();
        let b = adaptive_test_full_matching(&problem).unwrap();
        assert_eq!(a.rho_star, b.rho_star);
        assert_eq!(a.quantile, b.quantile);
        assert_eq!(a.y_star, b.y_star);
        assert_eq!(a.reject, b.reject);
        assert_eq!(a.statistics, b.statistics);
        for (ca, cb) in a.cells.iter().zip(b.cells.iter()) {
            assert_eq!(ca.status, cb.status);
            assert_eq!(ca.value, cb.value);
        }
    }

    #[test]
    fn full_matching_gamma_one_uses_folded_uniform_moments() {
        // Stratum 0: ordinary pair. Stratum 1: two treated, one control
        // (reversed), entering through the control unit with negated scores.
        let sample = MatchedSample::from_rows(vec![
            vec![(true, 2.0), (false, 0.0)],
            vec![(true, 1.5), (true, 2.5), (false, 0.1)],
        ]);
        let s1 = scores(vec![vec![1.0, 0.0], vec![1.0, 2.0, 0.0]]);
        let s2 = scores(vec![vec![0.0, 1.0], vec![3.0, 0.0, 1.0]]);
        let problem = AdaptiveProblem::new(sample, s1, s2, 1.0, 0.05).unwrap();
        assert!(matches!(
            adaptive_test(&problem),
            Err(Error::NotOneTreated { index: 1, .. })
        ));
        let verdict = adaptive_test_full_matching(&problem).unwrap();
        // Folded statistics: t1 = 1 - 0 = 1, t2 = 0 - 1 = -1.
        assert_abs_diff_eq!(verdict.statistics[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(verdict.statistics[1], -1.0, epsilon = 1e-12);
        // Folded uniform moments: mu1 = 0.5 - 1 = -0.5, var1 = 1/4 + 2/3;
        // mu2 = 0.5 - 4/3 = -5/6, var2 = 1/4 + 14/9. Only statistic 1 points
        // upward, so y* is its quadratic margin.
        let q = verdict.quantile;
        let expected = 1.5 * 1.5 - q * q * (0.25 + 2.0 / 3.0);
        assert_abs_diff_eq!(verdict.y_star, expected, epsilon = 1e-9);
        assert_eq!(verdict.reject, verdict.y_star >= 0.0);
    }

    #[test]
    fn max_min_expectation_opposed_pairs_closed_form() {
        let diffs = [[3.0, -1.0], [-1.0, 3.0]];
        for gamma in [2.0, 3.0, 5.0] {
            let expected = (gamma - 1.0) / (gamma + 1.0);
            let got = max_min_expectation(&diffs, gamma).unwrap();
            assert_abs_diff_eq!(got, expected, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(
            max_min_expectation(&diffs, 3.0).unwrap(),
            0.5,
            epsilon = 1e-4
        );
        assert_abs_diff_eq!(max_min_expectation(&diffs, 1.0).unwrap(), 0.0, epsilon = 0.0);
    }

    #[test]
    fn max_min_expectation_matches_box_solver() {
        // Independent check: maximize the smoothed minimum of the two mean
        // differences directly over the per-pair probability box.
        let diffs = [[3.0, -1.0], [-1.0, 3.0], [2.0, 0.5], [-0.5, 1.5]];
        let n = diffs.len();
        for gamma in [1.5, 2.0, 3.0] {
            let exact = max_min_expectation(&diffs, gamma).unwrap();
            let lo = vec![1.0 / (1.0 + gamma); n];
            let hi = vec![gamma / (1.0 + gamma); n];
            let means = |x: &[f64]| -> [f64; 2] {
                let mut m = [0.0f64; 2];
                for (i, d) in diffs.iter().enumerate() {
                    for k in 0..2 {
                        m[k] += d[k] * (2.0 * x[i] - 1.0) / n as f64;
                    }
                }
                m
            };
            let mut x = vec![0.5; n];
            for &tau in &[0.05, 0.002, 1e-4, 5e-6] {
                let sol = minimize_box(
                    |xx, g| {
                        let m = means(xx);
                        let mut wts = [0.0f64; 2];
                        let sm = smooth_max(&[-m[0], -m[1]], tau, &mut wts);
                        for (i, d) in diffs.iter().enumerate() {
                            g[i] = -(wts[0] * d[0] + wts[1] * d[1]) * 2.0 / n as f64;
                        }
                        sm
                    },
                    &x,
                    &lo,
                    &hi,
                    &SolveOptions::default(),
                );
                x = sol.x;
            }
            let m = means(&x);
            // The smoothed maximin carries a bias of order tau at an
            // interior optimum where both means are active.
            assert_abs_diff_eq!(exact, m[0].min(m[1]), epsilon = 5e-5);
        }
    }

    #[test]
    fn problem_construction_validates_domains() {
        let sample = pair_sample(&[[2.0, 0.0], [1.5, 0.3]]);
        let s = scores(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(matches!(
            AdaptiveProblem::new(sample.clone(), s.clone(), s.clone(), 0.9, 0.05),
            Err(Error::GammaBelowOne(_))
        ));
        assert!(matches!(
            AdaptiveProblem::new(sample.clone(), s.clone(), s.clone(), 2.0, 0.5),
            Err(Error::InvalidParameter(_))
        ));
        let misaligned = scores(vec![vec![1.0, 0.0]]);
        assert!(AdaptiveProblem::new(sample, misaligned, s, 2.0, 0.05).is_err());
    }
}
