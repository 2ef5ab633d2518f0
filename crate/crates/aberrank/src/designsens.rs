//! Design sensitivity: the bias level a test can ultimately tolerate.
//!
//! Fix a data-generating process with a genuine treatment effect and let the
//! number of matched sets grow. Each sensitivity test has a threshold Γ̃, its
//! *design sensitivity*: the power of the level-α analysis performed at Γ
//! tends to one when Γ < Γ̃ and to zero when Γ > Γ̃, so Γ̃ measures how much
//! hidden bias the test could ultimately shrug off under that process. Larger
//! is better, and the ranking of tests by Γ̃ usually settles which one to
//! carry into a study.
//!
//! The threshold solves a moment equation. Writing G for the large-sample
//! limit of the normalized aberrant-rank score as a function of the response,
//! the aberrant-rank test's Γ̃ equates the expected score of a treated unit,
//! E[G(R₁)], with the largest expected score a bias of Γ could manufacture
//! inside a matched set, which weights the sorted scores of the set by Γ
//! above a cut and 1 below it. The indicator test's Γ̃ does the same with
//! aberrance probabilities in place of expected scores. Both sides are
//! estimated by Monte Carlo on common draws, so their difference is a smooth,
//! increasing function of Γ whose root is found by bisection; the root, the
//! final bracket, and a batch-means standard error are reported together.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::normal;
use crate::simlab::{self, BaseDistribution, EffectKind, GeneratorSpec};
use crate::{Error, Result};

/// Pilot draws used to estimate marginals when no closed form exists.
const PILOT_DRAWS: usize = 1_000_000;

/// Substream reserved for the pilot pass so it never shares randomness with
/// the moment draws made from the same seed.
const PILOT_STREAM: u64 = u64::MAX;

/// Initial and maximal upper ends of the bisection bracket.
const BRACKET_HI_INITIAL: f64 = 50.0;
const BRACKET_HI_MAX: f64 = 100.0;

/// Batches for the standard-error estimate.
const SE_BATCHES: usize = 20;

/// Step-function distribution built from a sample, stored sorted.
#[derive(Clone, Debug)]
pub struct EmpiricalCdf {
    values: Arc<Vec<f64>>,
}

impl EmpiricalCdf {
    /// Sorts the sample and wraps it. Fails on empty or non-finite input.
    pub fn new(mut values: Vec<f64>) -> Result<EmpiricalCdf> {
        if values.is_empty() {
            return Err(Error::InvalidParameter(
                "an empirical distribution needs at least one value".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "empirical distribution values must be finite".into(),
            ));
        }
        values.sort_unstable_by(f64::total_cmp);
        Ok(EmpiricalCdf {
            values: Arc::new(values),
        })
    }

    /// Fraction of the sample at or below `v`.
    fn cdf(&self, v: f64) -> f64 {
        let k = self.values.partition_point(|&x| x <= v);
        k as f64 / self.values.len() as f64
    }

    /// Fraction of the sample strictly below `v`.
    fn below(&self, v: f64) -> f64 {
        let k = self.values.partition_point(|&x| x < v);
        k as f64 / self.values.len() as f64
    }
}

/// An evaluable response distribution function.
#[derive(Clone, Debug)]
pub enum Marginal {
    /// Normal with the given location and scale.
    Normal { shift: f64, scale: f64 },
    /// Variance-one Laplace stretched by `scale` and relocated by `shift`.
    Laplace { shift: f64, scale: f64 },
    /// Step function of a pilot sample.
    Empirical(EmpiricalCdf),
}

impl Marginal {
    /// P(V ≤ v).
    pub fn cdf(&self, v: f64) -> f64 {
        match self {
            Marginal::Normal { shift, scale } => normal::cdf((v - shift) / scale),
            Marginal::Laplace { shift, scale } => laplace_cdf((v - shift) / scale),
            Marginal::Empirical(e) => e.cdf(v),
        }
    }

    /// P(V < v). Differs from [`cdf`](Marginal::cdf) only on atoms.
    fn below(&self, v: f64) -> f64 {
        match self {
            Marginal::Empirical(e) => e.below(v),
            _ => self.cdf(v),
        }
    }
}

/// Distribution function of the variance-one Laplace law.
fn laplace_cdf(x: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x * std::f64::consts::SQRT_2).exp()
    } else {
        1.0 - 0.5 * (-x * std::f64::consts::SQRT_2).exp()
    }
}

/// Large-sample limit of the normalized aberrant-rank score.
///
/// A unit with response v in a population of matched sets with per-position
/// marginals F₁..F_m (treated first) earns the limiting score
///
/// ```text
/// G(v) = (1/m) Σⱼ max(Fⱼ(v) − Fⱼ(c⁻), 0),
/// ```
///
/// the average probability that a set member is aberrant with a response at
/// most v. G vanishes at and below the cutoff c and climbs to the average
/// aberrance probability.
#[derive(Clone, Debug)]
pub struct GFunction {
    marginals: Vec<Marginal>,
    cutoff: f64,
    below_cutoff: Vec<f64>,
}

impl GFunction {
    /// Builds the score limit from per-position marginals, treated first.
    ///
    /// A cutoff of `f64::NEG_INFINITY` makes every response aberrant, which
    /// recovers plain rank scores.
    pub fn new(marginals: Vec<Marginal>, cutoff: f64) -> Result<GFunction> {
        if marginals.is_empty() {
            return Err(Error::InvalidParameter(
                "a score limit needs at least one marginal".into(),
            ));
        }
        if cutoff.is_nan() || cutoff == f64::INFINITY {
            return Err(Error::InvalidParameter(format!(
                "aberrance cutoff must be finite or -inf, got {cutoff}"
            )));
        }
        let below_cutoff = marginals.iter().map(|f| f.below(cutoff)).collect();
        Ok(GFunction {
            marginals,
            cutoff,
            below_cutoff,
        })
    }

    /// Closed-form marginals for a generator, when it has them.
    ///
    /// The paired score construction has no response law in closed form, so
    /// it returns `None` and callers fall back to a pilot sample.
    pub fn from_generator(gen: &GeneratorSpec) -> Option<GFunction> {
        let control = match gen.base {
            BaseDistribution::Normal | BaseDistribution::MvNormal05 => Marginal::Normal {
                shift: 0.0,
                scale: 1.0,
            },
            BaseDistribution::Laplace | BaseDistribution::MvLaplace05 => Marginal::Laplace {
                shift: 0.0,
                scale: 1.0,
            },
            BaseDistribution::PairScores => return None,
        };
        let treated = match (gen.kind, &control) {
            (EffectKind::Additive, Marginal::Normal { .. }) => Marginal::Normal {
                shift: gen.effect,
                scale: 1.0,
            },
            (EffectKind::Additive, _) => Marginal::Laplace {
                shift: gen.effect,
                scale: 1.0,
            },
            (EffectKind::Multiplicative, Marginal::Normal { .. }) => Marginal::Normal {
                shift: 0.0,
                scale: gen.effect,
            },
            (EffectKind::Multiplicative, _) => Marginal::Laplace {
                shift: 0.0,
                scale: gen.effect,
            },
            (EffectKind::SuperAdaptivity, _) => unreachable!("paired bases return above"),
        };
        let mut marginals = Vec::with_capacity(gen.m);
        marginals.push(treated);
        marginals.resize(gen.m, control);
        Some(GFunction::new(marginals, gen.cutoff).expect("validated generator fields"))
    }

    /// Marginals estimated from pilot draws of the generator itself.
    ///
    /// Control positions are exchangeable, so their draws are pooled into a
    /// single empirical distribution.
    fn from_pilot(gen: &GeneratorSpec, n_draws: usize, rng: &mut ChaCha8Rng) -> Result<GFunction> {
        let n_sets = n_draws.div_ceil(gen.m).max(1);
        let mut treated = Vec::with_capacity(n_sets);
        let mut controls = Vec::with_capacity(n_sets * (gen.m - 1));
        let mut buf = Vec::with_capacity(gen.m);
        for _ in 0..n_sets {
            simlab::draw_set_responses(gen, rng, &mut buf);
            treated.push(buf[0]);
            controls.extend_from_slice(&buf[1..]);
        }
        let control = Marginal::Empirical(EmpiricalCdf::new(controls)?);
        let mut marginals = Vec::with_capacity(gen.m);
        marginals.push(Marginal::Empirical(EmpiricalCdf::new(treated)?));
        marginals.resize(gen.m, control);
        GFunction::new(marginals, gen.cutoff)
    }

    /// The limiting score of a response value.
    pub fn evaluate(&self, v: f64) -> f64 {
        let mut sum = 0.0;
        for (f, &base) in self.marginals.iter().zip(&self.below_cutoff) {
            sum += (f.cdf(v) - base).max(0.0);
        }
        sum / self.marginals.len() as f64
    }

    /// Number of units per matched set.
    pub fn set_size(&self) -> usize {
        self.marginals.len()
    }

    /// The aberrance cutoff the scores are built around.
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }
}

/// Which test's moment equation the root finder solves.
#[derive(Clone, Copy, Debug)]
enum MomentKind {
    AberrantRank,
    MantelHaenszel,
}

/// Monte-Carlo draws shared by every moment evaluation of one search.
///
/// Holding the draws fixed makes the bracketing function deterministic in Γ,
/// so bisection converges and repeated calls with one seed agree bit for bit.
struct DesignDraws {
    m: usize,
    n_strata: usize,
    /// Each stratum's limiting scores sorted ascending, flattened row-major.
    sorted_g: Vec<f64>,
    /// Limiting score of the treated response, one entry per stratum.
    treated_g: Vec<f64>,
    /// Aberrant units per stratum.
    aberrant: Vec<u32>,
    /// Whether the treated response was aberrant, one entry per stratum.
    treated_aberrant: Vec<bool>,
    empirical_marginals: bool,
}

impl DesignDraws {
    fn new(gen: &GeneratorSpec, n_mc: usize, seed: u64) -> Result<DesignDraws> {
        gen.validate()?;
        if n_mc == 0 {
            return Err(Error::InvalidParameter(
                "design sensitivity needs at least one Monte-Carlo draw".into(),
            ));
        }
        let (g, empirical_marginals) = match GFunction::from_generator(gen) {
            Some(g) => (g, false),
            None => {
                let mut pilot_rng = ChaCha8Rng::seed_from_u64(seed);
                pilot_rng.set_stream(PILOT_STREAM);
                (GFunction::from_pilot(gen, PILOT_DRAWS, &mut pilot_rng)?, true)
            }
        };
        let m = gen.m;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sorted_g = Vec::with_capacity(n_mc * m);
        let mut treated_g = Vec::with_capacity(n_mc);
        let mut aberrant = Vec::with_capacity(n_mc);
        let mut treated_aberrant = Vec::with_capacity(n_mc);
        let mut buf = Vec::with_capacity(m);
        for _ in 0..n_mc {
            simlab::draw_set_responses(gen, &mut rng, &mut buf);
            treated_g.push(g.evaluate(buf[0]));
            treated_aberrant.push(buf[0] >= gen.cutoff);
            let start = sorted_g.len();
            let mut count = 0u32;
            for &v in &buf {
                sorted_g.push(g.evaluate(v));
                if v >= gen.cutoff {
                    count += 1;
                }
            }
            sorted_g[start..].sort_unstable_by(f64::total_cmp);
            aberrant.push(count);
        }
        Ok(DesignDraws {
            m,
            n_strata: n_mc,
            sorted_g,
            treated_g,
            aberrant,
            treated_aberrant,
            empirical_marginals,
        })
    }

    /// Worst-case expected limiting score over the strata in `from..to`.
    ///
    /// Per stratum this is the cut maximization also performed by
    /// `senstests::stratum_worst_moments`, inlined over the presorted scores
    /// so a bisection pass does no allocation; a unit test pins the two to
    /// each other.
    fn phi_over(&self, gamma: f64, from: usize, to: usize) -> f64 {
        let m = self.m;
        let mut acc = 0.0;
        for i in from..to {
            let g = &self.sorted_g[i * m..(i + 1) * m];
            let tot: f64 = g.iter().sum();
            let mut best = f64::NEG_INFINITY;
            let mut pre = 0.0;
            for b in 1..m {
                pre += g[b - 1];
                let mu = (pre + gamma * (tot - pre)) / (b as f64 + gamma * (m - b) as f64);
                if mu > best {
                    best = mu;
                }
            }
            acc += best;
        }
        acc / (to - from) as f64
    }

    /// Worst-case aberrance probability of the treated unit over `from..to`.
    fn mh_over(&self, gamma: f64, from: usize, to: usize) -> f64 {
        let m = self.m as f64;
        let mut acc = 0.0;
        for &a in &self.aberrant[from..to] {
            let a = f64::from(a);
            acc += gamma * a / ((gamma - 1.0) * a + m);
        }
        acc / (to - from) as f64
    }

    fn moment(&self, kind: MomentKind, gamma: f64, from: usize, to: usize) -> f64 {
        match kind {
            MomentKind::AberrantRank => self.phi_over(gamma, from, to),
            MomentKind::MantelHaenszel => self.mh_over(gamma, from, to),
        }
    }

    /// The favorable-process side of the moment equation over `from..to`.
    fn target(&self, kind: MomentKind, from: usize, to: usize) -> f64 {
        let n = (to - from) as f64;
        match kind {
            MomentKind::AberrantRank => self.treated_g[from..to].iter().sum::<f64>() / n,
            MomentKind::MantelHaenszel => {
                self.treated_aberrant[from..to]
                    .iter()
                    .filter(|&&t| t)
                    .count() as f64
                    / n
            }
        }
    }
}

/// A solved design sensitivity with its Monte-Carlo diagnostics.
#[derive(Clone, Debug, Serialize)]
pub struct DesignSensResult {
    /// Root of the moment equation; power transitions from 1 to 0 here.
    pub gamma_tilde: f64,
    /// Final bisection bracket, `bracket.0 < gamma_tilde < bracket.1`.
    pub bracket: (f64, f64),
    /// Matched-set draws behind every moment evaluation.
    pub mc_samples: usize,
    /// Batch-means standard error of the root location.
    pub std_error_estimate: f64,
    /// Marginals came from a pilot sample rather than closed forms.
    pub empirical_marginals: bool,
}

/// Worst-case expected limiting score manufacturable by a bias of `gamma`.
///
/// Nondecreasing in `gamma` on common draws, which makes it the left side of
/// the aberrant-rank moment equation; compare it with [`true_mean`] computed
/// from the same seed.
pub fn phi_gamma(gen: &GeneratorSpec, gamma: f64, n_mc: usize, seed: u64) -> Result<f64> {
    if gamma < 1.0 {
        return Err(Error::GammaBelowOne(gamma));
    }
    let draws = DesignDraws::new(gen, n_mc, seed)?;
    Ok(draws.phi_over(gamma, 0, draws.n_strata))
}

/// Expected limiting score of the treated unit under the generator.
pub fn true_mean(gen: &GeneratorSpec, n_mc: usize, seed: u64) -> Result<f64> {
    let draws = DesignDraws::new(gen, n_mc, seed)?;
    Ok(draws.target(MomentKind::AberrantRank, 0, draws.n_strata))
}

/// Design sensitivity of the aberrant-rank test under the generator.
pub fn design_sensitivity_aberrant(
    gen: &GeneratorSpec,
    tol: f64,
    n_mc: usize,
    seed: u64,
) -> Result<DesignSensResult> {
    solve_design(gen, MomentKind::AberrantRank, tol, n_mc, seed)
}

/// Design sensitivity of the aberrance-indicator test under the generator.
pub fn design_sensitivity_mh(
    gen: &GeneratorSpec,
    tol: f64,
    n_mc: usize,
    seed: u64,
) -> Result<DesignSensResult> {
    solve_design(gen, MomentKind::MantelHaenszel, tol, n_mc, seed)
}

fn solve_design(
    gen: &GeneratorSpec,
    kind: MomentKind,
    tol: f64,
    n_mc: usize,
    seed: u64,
) -> Result<DesignSensResult> {
    if !(tol.is_finite() && tol > 0.0 && tol < 10.0) {
        return Err(Error::InvalidParameter(format!(
            "bisection tolerance must lie in (0, 10), got {tol}"
        )));
    }
    if n_mc < SE_BATCHES {
        return Err(Error::InvalidParameter(format!(
            "design sensitivity needs at least {SE_BATCHES} draws for its error estimate, got {n_mc}"
        )));
    }
    let draws = DesignDraws::new(gen, n_mc, seed)?;
    let n = draws.n_strata;
    let target = draws.target(kind, 0, n);
    let h = |gamma: f64| draws.moment(kind, gamma, 0, n) - target;

    // The moment is nondecreasing in gamma and the difference h starts
    // negative under a genuine effect; the design sensitivity is where h
    // crosses zero.
    let mut lo = 1.0 + 1e-6;
    let at_lo = h(lo);
    if at_lo >= 0.0 {
        return Err(Error::BracketFailure(format!(
            "worst-case moment already meets its target at gamma = 1 \
             (difference {at_lo:+.3e}); the generator shows no effect this test can detect"
        )));
    }
    let mut hi = BRACKET_HI_INITIAL;
    while h(hi) <= 0.0 {
        if hi >= BRACKET_HI_MAX {
            return Err(Error::BracketFailure(format!(
                "no crossing below gamma = {BRACKET_HI_MAX} \
                 (difference {:+.3e} there); the design sensitivity exceeds the search range",
                h(hi)
            )));
        }
        hi = (hi * 2.0).min(BRACKET_HI_MAX);
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let gamma_tilde = 0.5 * (lo + hi);

    // Batch-means error: the sd of per-batch moment-minus-target differences
    // at the root, divided by the local slope of the pooled difference. The
    // slope is noise-free because every evaluation reuses the same draws.
    let diffs: Vec<f64> = (0..SE_BATCHES)
        .map(|k| {
            let a = k * n / SE_BATCHES;
            let b = (k + 1) * n / SE_BATCHES;
            draws.moment(kind, gamma_tilde, a, b) - draws.target(kind, a, b)
        })
        .collect();
    let mean = diffs.iter().sum::<f64>() / SE_BATCHES as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
        / (SE_BATCHES - 1) as f64;
    let se_diff = (var / SE_BATCHES as f64).sqrt();
    let step = tol.max(1e-3 * (gamma_tilde - 1.0)).min(gamma_tilde - 1.0);
    let slope = (h(gamma_tilde + step) - h(gamma_tilde - step)) / (2.0 * step);
    let std_error_estimate = se_diff / slope.max(1e-12);

    Ok(DesignSensResult {
        gamma_tilde,
        bracket: (lo, hi),
        mc_samples: n_mc,
        std_error_estimate,
        empirical_marginals: draws.empirical_marginals,
    })
}
