//! Test statistics and worst-case bounds under the Γ sensitivity model.
//!
//! The statistics here are sums of fixed nonnegative per-unit scores over
//! treated units, `T = Σ q(treated)`. Under no hidden bias, randomization
//! within each stratum makes the treated pick uniform; under bias bounded by
//! Γ, a unit's assignment odds may be tilted by any factor up to Γ via an
//! unobserved confounder u. The worst-case p-value at Γ is the largest
//! one-sided p-value over all confounder configurations.
//!
//! Two worst-case engines are provided:
//!
//! - [`mh_worst_case`]: for aberration indicators, the bound is a sum of
//!   independent Bernoulli variables with per-stratum success probability
//!   `p_i⁺ = Γ aᵢ / ((Γ−1) aᵢ + nᵢ)` where aᵢ counts the stratum's aberrant
//!   units, approximated by its normal limit.
//! - [`separability_worst_case`]: for general scores, asymptotic
//!   separability maximizes each stratum's null mean (then, among mean
//!   maximizers, the variance). With the stratum's scores sorted ascending,
//!   the candidates put the confounder on the top `n−b` units:
//!
//!   ```text
//!   mu_b = (Σ_{j<=b} q_(j) + Γ Σ_{j>b} q_(j)) / (b + Γ (n−b)),  b in 1..n
//!   nu_b = (Σ_{j<=b} q²_(j) + Γ Σ_{j>b} q²_(j)) / (b + Γ (n−b)) − mu_b²
//!   ```
//!
//!   The worst-case deviate is `(t − Σ mu*) / sqrt(Σ nu*)`.
//!
//! Both engines are one-sided in the "greater" direction, with no continuity
//! correction. Exact references for small instances are
//! [`randomization_pvalue`] (Γ = 1, full enumeration) and
//! [`brute_force_worst_case`] (maximization over all binary confounder
//! vectors, exact assignment law).

use serde::{Deserialize, Serialize};

use crate::normal;
use crate::sample::{aberrant_indicators, canonicalize, validate, AberrantSpec, MatchedSample, ScoreVector};
use crate::{Error, Result};

/// Ascending grid of sensitivity parameters, all ≥ 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaGrid {
    values: Vec<f64>,
}

impl GammaGrid {
    /// Validates that the grid is nonempty, finite, starts at or above 1,
    /// and is strictly increasing.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("gamma grid is empty".into()));
        }
        for &g in &values {
            if !g.is_finite() {
                return Err(Error::InvalidParameter("gamma grid has a non-finite entry".into()));
            }
            if g < 1.0 {
                return Err(Error::GammaBelowOne(g));
            }
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "gamma grid must be strictly increasing".into(),
            ));
        }
        Ok(GammaGrid { values })
    }

    /// Inclusive range `start, start+step, ..., <= stop` (the endpoint is
    /// included when it lands within a half-step of the last value).
    pub fn from_range(start: f64, stop: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !start.is_finite() || !stop.is_finite() || stop < start {
            return Err(Error::InvalidParameter(format!(
                "bad gamma range {start}:{stop}:{step}"
            )));
        }
        let mut values = Vec::new();
        let n = ((stop - start) / step + 0.5).floor() as usize;
        for k in 0..=n {
            let g = start + step * k as f64;
            if g <= stop + step * 1e-9 {
                values.push(g.min(stop));
            }
        }
        GammaGrid::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Worst-case bound at one Γ: the observed statistic, the maximized null
/// mean and variance, and the resulting one-sided normal deviate and
/// p-value.
///
/// When the worst-case variance degenerates to zero (exactly or up to float
/// cancellation dust) the normal form has no limit deviate; by convention
/// `p = 1` if `t ≤ worst_mean` up to a relative tie slack, else `p = 0`,
/// and the deviate is reported as ∓∞ accordingly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseResult {
    pub statistic: f64,
    pub worst_mean: f64,
    pub worst_variance: f64,
    pub deviate: f64,
    pub p_value: f64,
}

fn assemble(statistic: f64, worst_mean: f64, worst_variance: f64) -> WorstCaseResult {
    // Cancellation in E[q²] - μ² leaves dust of order ulp(scale²) even when
    // the statistic is deterministic, so variances at that scale count as
    // zero, and the mean comparison gets the same relative slack the
    // enumeration paths use; otherwise bit noise in the worst mean could
    // flip a deterministic tie between p = 1 and p = 0.
    let scale = statistic.abs().max(worst_mean.abs()).max(1.0);
    let (deviate, p_value) = if worst_variance > 1e-14 * scale * scale {
        let d = (statistic - worst_mean) / worst_variance.sqrt();
        (d, normal::upper_tail(d))
    } else if statistic <= worst_mean + TIE_SLACK * scale {
        (f64::NEG_INFINITY, 1.0)
    } else {
        (f64::INFINITY, 0.0)
    };
    WorstCaseResult {
        statistic,
        worst_mean,
        worst_variance,
        deviate,
        p_value,
    }
}

/// Requires one treated unit in every stratum; returns the treated indices.
fn treated_indices(sample: &MatchedSample) -> Result<Vec<usize>> {
    sample
        .strata
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let n = s.size();
            let t = s.treated_count();
            if t != 1 {
                return Err(Error::NotOneTreated {
                    index: i,
                    treated: t,
                    size: n,
                });
            }
            Ok(s.units.iter().position(|u| u.treated).expect("t == 1"))
        })
        .collect()
}

/// Observed statistic `T = Σ q over treated units`.
pub fn statistic(sample: &MatchedSample, scores: &ScoreVector) -> Result<f64> {
    scores.check_alignment(sample)?;
    let mut t = 0.0;
    for (st, sc) in sample.strata.iter().zip(scores.strata()) {
        for (u, &q) in st.units.iter().zip(sc) {
            if u.treated {
                t += q;
            }
        }
    }
    Ok(t)
}

/// Worst-case per-stratum null mean and variance of the treated score for
/// arbitrary finite scores (nonnegativity is not needed here): the maximum
/// over confounder configurations of the stratum's expected treated score,
/// and, over the set of near-maximizers (relative tolerance 1e-9), the
/// largest variance.
///
/// This is the separability building block, exposed for oracle testing and
/// for feasibility analysis of the adaptive programs.
pub fn stratum_worst_moments(scores: &[f64], gamma: f64) -> (f64, f64) {
    let n = scores.len();
    debug_assert!(n >= 1 && gamma >= 1.0);
    if n == 1 {
        return (scores[0], 0.0);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let tot: f64 = sorted.iter().sum();
    let tot2: f64 = sorted.iter().map(|q| q * q).sum();
    let mut best_mu = f64::NEG_INFINITY;
    let mut best_nu = 0.0f64;
    let mut pre = 0.0;
    let mut pre2 = 0.0;
    for b in 1..n {
        pre += sorted[b - 1];
        pre2 += sorted[b - 1] * sorted[b - 1];
        let den = b as f64 + gamma * (n - b) as f64;
        let mu = (pre + gamma * (tot - pre)) / den;
        let nu = (pre2 + gamma * (tot2 - pre2)) / den - mu * mu;
        let tol = 1e-9 * best_mu.abs().max(1e-300);
        if mu > best_mu + tol {
            best_mu = mu;
            best_nu = nu;
        } else if mu >= best_mu - tol {
            best_mu = best_mu.max(mu);
            best_nu = best_nu.max(nu);
        }
    }
    (best_mu, best_nu.max(0.0))
}

/// Smallest and largest achievable expected treated score for one stratum
/// over all confounder configurations at Γ.
pub fn stratum_mean_range(scores: &[f64], gamma: f64) -> (f64, f64) {
    let (hi, _) = stratum_worst_moments(scores, gamma);
    let negated: Vec<f64> = scores.iter().map(|q| -q).collect();
    let (neg_hi, _) = stratum_worst_moments(&negated, gamma);
    (-neg_hi, hi)
}

/// Worst-case bound for the Mantel-Haenszel statistic (count of aberrant
/// treated units) at Γ.
///
/// Each stratum needs exactly one treated unit; sizes may vary, in which
/// case the Bernoulli bound uses that stratum's own size in place of the
/// common m. Reversed (full-matching) strata are rejected; use the
/// separability path on folded scores for those designs.
pub fn mh_worst_case(
    sample: &MatchedSample,
    spec: &AberrantSpec,
    gamma: f64,
) -> Result<WorstCaseResult> {
    if gamma < 1.0 {
        return Err(Error::GammaBelowOne(gamma));
    }
    validate(sample)?;
    treated_indices(sample)?;
    let (canon, cspec) = canonicalize(sample, spec);
    let ind = aberrant_indicators(&canon, &cspec);
    let t = statistic(&canon, &ind)?;
    let mut mean = 0.0;
    let mut var = 0.0;
    for sc in ind.strata() {
        let n = sc.len() as f64;
        let a: f64 = sc.iter().sum();
        let p_plus = if a > 0.0 {
            gamma * a / ((gamma - 1.0) * a + n)
        } else {
            0.0
        };
        mean += p_plus;
        var += p_plus * (1.0 - p_plus);
    }
    Ok(assemble(t, mean, var))
}

/// Worst-case bound for a general nonnegative-score statistic at Γ via
/// asymptotic separability. Requires one treated unit per stratum.
pub fn separability_worst_case(
    sample: &MatchedSample,
    scores: &ScoreVector,
    gamma: f64,
) -> Result<WorstCaseResult> {
    if gamma < 1.0 {
        return Err(Error::GammaBelowOne(gamma));
    }
    scores.check_alignment(sample)?;
    validate(sample)?;
    treated_indices(sample)?;
    let t = statistic(sample, scores)?;
    let mut mean = 0.0;
    let mut var = 0.0;
    for sc in scores.strata() {
        let (mu, nu) = stratum_worst_moments(sc, gamma);
        mean += mu;
        var += nu;
    }
    Ok(assemble(t, mean, var))
}

/// How [`randomization_pvalue`] evaluates the null distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PvalueMode {
    /// Full enumeration of all within-stratum assignments (requires the
    /// assignment count Π nᵢ ≤ 10⁷).
    Exact,
    /// Normal approximation; identical to separability at Γ = 1.
    Normal,
}

/// Relative slack used when comparing enumerated statistic values against
/// the observed one, so that bit-level float noise cannot flip a tie.
const TIE_SLACK: f64 = 1e-9;

const EXACT_BUDGET: u64 = 10_000_000;

/// One-sided randomization p-value `P(T ≥ t)` under uniform within-stratum
/// assignment (no hidden bias), exact or by normal approximation.
pub fn randomization_pvalue(
    sample: &MatchedSample,
    scores: &ScoreVector,
    mode: PvalueMode,
) -> Result<f64> {
    match mode {
        PvalueMode::Normal => Ok(separability_worst_case(sample, scores, 1.0)?.p_value),
        PvalueMode::Exact => {
            scores.check_alignment(sample)?;
            validate(sample)?;
            treated_indices(sample)?;
            let t = statistic(sample, scores)?;
            let mut total: u64 = 1;
            for st in &sample.strata {
                total = total
                    .checked_mul(st.size() as u64)
                    .filter(|&v| v <= EXACT_BUDGET)
                    .ok_or_else(|| Error::BudgetExceeded {
                        detail: format!("assignment count exceeds {EXACT_BUDGET}"),
                    })?;
            }
            let strata = scores.strata();
            let slack = TIE_SLACK * t.abs().max(1.0);
            let threshold = t - slack;
            // Depth-first over strata, carrying the partial sum plus the
            // maximum achievable remainder for pruning.
            let suffix_max: Vec<f64> = {
                let mut v = vec![0.0; strata.len() + 1];
                for i in (0..strata.len()).rev() {
                    v[i] = v[i + 1] + strata[i].iter().cloned().fold(f64::MIN, f64::max);
                }
                v
            };
            let suffix_min: Vec<f64> = {
                let mut v = vec![0.0; strata.len() + 1];
                for i in (0..strata.len()).rev() {
                    v[i] = v[i + 1] + strata[i].iter().cloned().fold(f64::MAX, f64::min);
                }
                v
            };
            let counts: Vec<u64> = {
                // Assignments below stratum i (product of later sizes).
                let mut v = vec![1u64; strata.len() + 1];
                for i in (0..strata.len()).rev() {
                    v[i] = v[i + 1] * strata[i].len() as u64;
                }
                v
            };
            fn walk(
                strata: &[Vec<f64>],
                i: usize,
                partial: f64,
                threshold: f64,
                suffix_max: &[f64],
                suffix_min: &[f64],
                counts: &[u64],
            ) -> u64 {
                if partial + suffix_max[i] < threshold {
                    return 0;
                }
                if partial + suffix_min[i] >= threshold {
                    return counts[i];
                }
                let mut hits = 0;
                for &q in &strata[i] {
                    hits += walk(strata, i + 1, partial + q, threshold, suffix_max, suffix_min, counts);
                }
                hits
            }
            let hits = walk(strata, 0, 0.0, threshold, &suffix_max, &suffix_min, &counts);
            Ok(hits as f64 / total as f64)
        }
    }
}

const BRUTE_FORCE_MAX_UNITS: usize = 20;

/// Exact worst-case p-value by enumerating every binary confounder vector
/// u in {0,1}^N and computing the exact tail probability of `T ≥ t` under
/// the tilted assignment law (weight Γ^u within each stratum). Limited to
/// N ≤ 20 total units.
///
/// Binary u suffices: each stratum's contribution to the tail probability is
/// monotone in each uᵢⱼ along [0,1], so the extremum over the cube sits at a
/// vertex (the dense-grid comparison in the test suite exercises this).
pub fn brute_force_worst_case(
    sample: &MatchedSample,
    scores: &ScoreVector,
    gamma: f64,
) -> Result<f64> {
    if gamma < 1.0 {
        return Err(Error::GammaBelowOne(gamma));
    }
    scores.check_alignment(sample)?;
    validate(sample)?;
    treated_indices(sample)?;
    let n_units = sample.n_units();
    if n_units > BRUTE_FORCE_MAX_UNITS {
        return Err(Error::BudgetExceeded {
            detail: format!("{n_units} units exceeds the {BRUTE_FORCE_MAX_UNITS}-unit brute-force cap"),
        });
    }
    let t = statistic(sample, scores)?;
    let strata = scores.strata();
    let slack = TIE_SLACK * t.abs().max(1.0);
    let threshold = t - slack;

    // Enumerate per-stratum confounder patterns once; each pattern yields a
    // probability vector over that stratum's units.
    let per_stratum: Vec<Vec<Vec<f64>>> = strata
        .iter()
        .map(|sc| {
            let n = sc.len();
            (0..1u32 << n)
                .map(|mask| {
                    let mut w: Vec<f64> = (0..n)
                        .map(|j| if mask >> j & 1 == 1 { gamma } else { 1.0 })
                        .collect();
                    let s: f64 = w.iter().sum();
                    w.iter_mut().for_each(|x| *x /= s);
                    w
                })
                .collect()
        })
        .collect();

    let suffix_max: Vec<f64> = {
        let mut v = vec![0.0; strata.len() + 1];
        for i in (0..strata.len()).rev() {
            v[i] = v[i + 1] + strata[i].iter().cloned().fold(f64::MIN, f64::max);
        }
        v
    };
    let suffix_min: Vec<f64> = {
        let mut v = vec![0.0; strata.len() + 1];
        for i in (0..strata.len()).rev() {
            v[i] = v[i + 1] + strata[i].iter().cloned().fold(f64::MAX, f64::min);
        }
        v
    };

    // Tail probability of the selected-score sum for one pattern combination.
    fn tail(
        strata: &[Vec<f64>],
        probs: &[&Vec<f64>],
        i: usize,
        partial: f64,
        threshold: f64,
        suffix_max: &[f64],
        suffix_min: &[f64],
    ) -> f64 {
        if partial + suffix_max[i] < threshold {
            return 0.0;
        }
        if partial + suffix_min[i] >= threshold {
            return 1.0;
        }
        let mut p = 0.0;
        for (j, &q) in strata[i].iter().enumerate() {
            p += probs[i][j]
                * tail(strata, probs, i + 1, partial + q, threshold, suffix_max, suffix_min);
        }
        p
    }

    // Odometer over per-stratum pattern indices.
    let mut idx = vec![0usize; strata.len()];
    let mut worst = 0.0f64;
    loop {
        let probs: Vec<&Vec<f64>> = idx
            .iter()
            .enumerate()
            .map(|(i, &k)| &per_stratum[i][k])
            .collect();
        let p = tail(strata, &probs, 0, 0.0, threshold, &suffix_max, &suffix_min);
        worst = worst.max(p);
        let mut carry = true;
        for i in 0..idx.len() {
            if idx[i] + 1 < per_stratum[i].len() {
                idx[i] += 1;
                carry = false;
                break;
            }
            idx[i] = 0;
        }
        if carry {
            break;
        }
    }
    Ok(worst)
}

/// Which worst-case engine drives a sensitivity-value search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorstCaseMethod {
    /// Bernoulli bound for 0/1 indicator scores.
    MantelHaenszel,
    /// Asymptotic separability for general nonnegative scores.
    Separability,
}

/// Outcome of the sensitivity-value search at level α.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SensitivityOutcome {
    /// Already insignificant at the smallest grid Γ.
    NotSignificant { p_at_grid_start: f64 },
    /// The worst-case p-value crosses α at this Γ (located to 1e-3).
    Crossing { gamma: f64 },
    /// Still significant at the largest grid Γ; the true value exceeds it.
    ExceedsGrid { gamma_max: f64, p_at_grid_max: f64 },
}

fn worst_p(
    sample: &MatchedSample,
    scores: &ScoreVector,
    gamma: f64,
    method: WorstCaseMethod,
) -> Result<f64> {
    match method {
        WorstCaseMethod::Separability => {
            Ok(separability_worst_case(sample, scores, gamma)?.p_value)
        }
        WorstCaseMethod::MantelHaenszel => {
            // Indicator scores carry the aberration pattern; the stratum
            // aberrant count is just their sum.
            let t = statistic(sample, scores)?;
            let mut mean = 0.0;
            let mut var = 0.0;
            for (i, sc) in scores.strata().iter().enumerate() {
                let mut a = 0.0;
                for (j, &q) in sc.iter().enumerate() {
                    if q != 0.0 && q != 1.0 {
                        return Err(Error::InvalidParameter(format!(
                            "Mantel-Haenszel scores must be 0/1; found {q} at stratum {i}, unit {j}"
                        )));
                    }
                    a += q;
                }
                let n = sc.len() as f64;
                let p_plus = if a > 0.0 {
                    gamma * a / ((gamma - 1.0) * a + n)
                } else {
                    0.0
                };
                mean += p_plus;
                var += p_plus * (1.0 - p_plus);
            }
            Ok(assemble(t, mean, var).p_value)
        }
    }
}

/// Finds where the worst-case p-value crosses α along a Γ grid, refining the
/// crossing to 10⁻³ by bisection. The p-values must be nondecreasing along
/// the grid (they are for both engines; violations report an error rather
/// than a wrong root).
pub fn sensitivity_value(
    sample: &MatchedSample,
    scores: &ScoreVector,
    alpha: f64,
    grid: &GammaGrid,
    method: WorstCaseMethod,
) -> Result<SensitivityOutcome> {
    if !(alpha > 0.0 && alpha <= 0.5) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 0.5], got {alpha}"
        )));
    }
    scores.check_alignment(sample)?;
    validate(sample)?;
    treated_indices(sample)?;
    let gammas = grid.values();
    let ps: Vec<f64> = gammas
        .iter()
        .map(|&g| worst_p(sample, scores, g, method))
        .collect::<Result<_>>()?;
    for w in 0..ps.len().saturating_sub(1) {
        if ps[w + 1] < ps[w] - 1e-10 {
            return Err(Error::NonMonotonePvalue {
                gamma_lo: gammas[w],
                gamma_hi: gammas[w + 1],
                p_lo: ps[w],
                p_hi: ps[w + 1],
            });
        }
    }
    if ps[0] > alpha {
        return Ok(SensitivityOutcome::NotSignificant {
            p_at_grid_start: ps[0],
        });
    }
    let last = ps.len() - 1;
    if ps[last] <= alpha {
        return Ok(SensitivityOutcome::ExceedsGrid {
            gamma_max: gammas[last],
            p_at_grid_max: ps[last],
        });
    }
    let k = ps.iter().position(|&p| p > alpha).expect("checked above");
    let mut lo = gammas[k - 1];
    let mut hi = gammas[k];
    while hi - lo > 1e-3 {
        let mid = 0.5 * (lo + hi);
        if worst_p(sample, scores, mid, method)? <= alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(SensitivityOutcome::Crossing {
        gamma: 0.5 * (lo + hi),
    })
}
