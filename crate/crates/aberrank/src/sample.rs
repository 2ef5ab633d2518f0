//! Matched samples, aberrant-set definitions, and score construction.
//!
//! A matched sample is a list of strata; each stratum holds units that share
//! observed covariates, of which either exactly one is treated (the usual
//! case) or exactly one is a control (a reversed stratum, which occurs under
//! full matching). Responses are real-valued outcomes.
//!
//! An aberrant set is a half-line of bad outcomes, `[c, +inf)` or `(-inf, c]`.
//! Analyses here are one-sided in the "treatment causes aberration"
//! direction, and every operation first canonicalizes the at-or-below case to
//! at-or-above by negating responses and cutoff, which preserves membership.
//!
//! Two score vectors are derived from a sample and an aberrant set:
//!
//! - aberration indicators, `1(response in A)`, which feed the
//!   Mantel-Haenszel test, and
//! - aberrant ranks: a non-aberrant unit scores 0; an aberrant unit scores
//!   its rank among all aberrant responses across the whole sample. Ranks of
//!   tied aberrant responses are averaged (the underlying theory assumes
//!   continuous responses and never ties; averaging keeps the statistic's
//!   null expectation equal to its mean over tie-breaking orders).

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One experimental unit: a treatment flag and a real-valued response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub treated: bool,
    pub response: f64,
}

/// A matched stratum of units sharing observed covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub units: Vec<Unit>,
}

impl Stratum {
    pub fn size(&self) -> usize {
        self.units.len()
    }

    pub fn treated_count(&self) -> usize {
        self.units.iter().filter(|u| u.treated).count()
    }
}

/// A matched observational sample: strata of treated and control units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedSample {
    pub strata: Vec<Stratum>,
}

impl MatchedSample {
    /// Builds a sample from `(treated flags, responses)` per stratum.
    /// Shape problems are deferred to [`validate`].
    pub fn from_rows(rows: Vec<Vec<(bool, f64)>>) -> Self {
        MatchedSample {
            strata: rows
                .into_iter()
                .map(|units| Stratum {
                    units: units
                        .into_iter()
                        .map(|(treated, response)| Unit { treated, response })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn n_strata(&self) -> usize {
        self.strata.len()
    }

    pub fn n_units(&self) -> usize {
        self.strata.iter().map(Stratum::size).sum()
    }
}

/// Which side of the cutoff counts as aberrant. Both intervals are closed:
/// a response exactly at the cutoff is aberrant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Aberrant set `[cutoff, +inf)`.
    AtOrAbove,
    /// Aberrant set `(-inf, cutoff]`.
    AtOrBelow,
}

/// Definition of the aberrant outcome region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AberrantSpec {
    pub cutoff: f64,
    pub direction: Direction,
}

impl AberrantSpec {
    pub fn at_or_above(cutoff: f64) -> Self {
        AberrantSpec {
            cutoff,
            direction: Direction::AtOrAbove,
        }
    }

    pub fn at_or_below(cutoff: f64) -> Self {
        AberrantSpec {
            cutoff,
            direction: Direction::AtOrBelow,
        }
    }
}

/// Per-unit nonnegative scores aligned with a sample's strata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    scores: Vec<Vec<f64>>,
}

impl ScoreVector {
    /// Wraps raw per-stratum scores, checking nonnegativity and finiteness.
    /// Alignment with a particular sample is checked where the scores are
    /// consumed, since a score vector may outlive the sample it came from.
    pub fn new(scores: Vec<Vec<f64>>) -> Result<Self> {
        for (i, stratum) in scores.iter().enumerate() {
            for (j, &q) in stratum.iter().enumerate() {
                if !q.is_finite() {
                    return Err(Error::NonFiniteValue {
                        stratum: i,
                        unit: j,
                    });
                }
                if q < 0.0 {
                    return Err(Error::NegativeScore {
                        stratum: i,
                        unit: j,
                    });
                }
            }
        }
        Ok(ScoreVector { scores })
    }

    pub fn stratum(&self, i: usize) -> &[f64] {
        &self.scores[i]
    }

    pub fn strata(&self) -> &[Vec<f64>] {
        &self.scores
    }

    pub fn n_strata(&self) -> usize {
        self.scores.len()
    }

    /// Errors unless the scores have exactly the sample's shape.
    pub fn check_alignment(&self, sample: &MatchedSample) -> Result<()> {
        if self.scores.len() != sample.strata.len() {
            return Err(Error::ShapeMismatch {
                index: self.scores.len().min(sample.strata.len()),
            });
        }
        for (i, (sc, st)) in self.scores.iter().zip(&sample.strata).enumerate() {
            if sc.len() != st.units.len() {
                return Err(Error::ShapeMismatch { index: i });
            }
        }
        Ok(())
    }
}

/// Stratum composition of a validated sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleShape {
    /// Every stratum has exactly one treated unit and the same total size m.
    FixedSize { m: usize },
    /// Every stratum has exactly one treated unit; sizes vary.
    OneTreated,
    /// At least one reversed stratum (one control, several treated).
    FullMatching,
}

/// What [`validate`] reports about a well-formed sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDiagnostics {
    pub n_strata: usize,
    pub n_units: usize,
    pub stratum_sizes: Vec<usize>,
    pub shape: SampleShape,
    /// `true` where a stratum is reversed (exactly one control unit and two
    /// or more treated). Strata with one treated unit are not reversed, so a
    /// 1-treated/1-control pair is not reversed.
    pub reversed: Vec<bool>,
}

/// Checks structural invariants and classifies the sample's shape.
///
/// Requirements: at least one stratum; every stratum has at least two units,
/// finite responses, and either exactly one treated unit or exactly one
/// control unit.
pub fn validate(sample: &MatchedSample) -> Result<SampleDiagnostics> {
    if sample.strata.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut sizes = Vec::with_capacity(sample.strata.len());
    let mut reversed = Vec::with_capacity(sample.strata.len());
    for (i, stratum) in sample.strata.iter().enumerate() {
        let n = stratum.size();
        if n < 2 {
            return Err(Error::MalformedStratum {
                index: i,
                reason: format!("has {n} unit(s); every stratum needs at least 2"),
            });
        }
        for (j, unit) in stratum.units.iter().enumerate() {
            if !unit.response.is_finite() {
                return Err(Error::NonFiniteValue {
                    stratum: i,
                    unit: j,
                });
            }
        }
        let t = stratum.treated_count();
        if t == 0 || t == n {
            return Err(Error::MalformedStratum {
                index: i,
                reason: format!("has {t} treated of {n} units; needs both a treated and a control"),
            });
        }
        if t != 1 && t != n - 1 {
            return Err(Error::MalformedStratum {
                index: i,
                reason: format!(
                    "has {t} treated of {n} units; needs exactly one treated or exactly one control"
                ),
            });
        }
        sizes.push(n);
        reversed.push(t == n - 1 && n > 2);
    }
    let any_reversed = reversed.iter().any(|&r| r);
    let shape = if any_reversed {
        SampleShape::FullMatching
    } else if sizes.windows(2).all(|w| w[0] == w[1]) {
        SampleShape::FixedSize { m: sizes[0] }
    } else {
        SampleShape::OneTreated
    };
    Ok(SampleDiagnostics {
        n_strata: sample.strata.len(),
        n_units: sample.n_units(),
        stratum_sizes: sizes,
        shape,
        reversed,
    })
}

/// Rewrites an at-or-below problem as at-or-above by negating responses and
/// cutoff; at-or-above input is returned unchanged. Aberration status of
/// every unit is preserved, and applying the map twice equals applying it
/// once.
pub fn canonicalize(sample: &MatchedSample, spec: &AberrantSpec) -> (MatchedSample, AberrantSpec) {
    match spec.direction {
        Direction::AtOrAbove => (sample.clone(), *spec),
        Direction::AtOrBelow => {
            let flipped = MatchedSample {
                strata: sample
                    .strata
                    .iter()
                    .map(|s| Stratum {
                        units: s
                            .units
                            .iter()
                            .map(|u| Unit {
                                treated: u.treated,
                                response: -u.response,
                            })
                            .collect(),
                    })
                    .collect(),
            };
            (flipped, AberrantSpec::at_or_above(-spec.cutoff))
        }
    }
}

fn is_aberrant(response: f64, spec: &AberrantSpec) -> bool {
    match spec.direction {
        Direction::AtOrAbove => response >= spec.cutoff,
        Direction::AtOrBelow => response <= spec.cutoff,
    }
}

/// Scores every unit 1 if its response is aberrant, else 0.
pub fn aberrant_indicators(sample: &MatchedSample, spec: &AberrantSpec) -> ScoreVector {
    let scores = sample
        .strata
        .iter()
        .map(|s| {
            s.units
                .iter()
                .map(|u| if is_aberrant(u.response, spec) { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    ScoreVector { scores }
}

/// Scores every aberrant unit by its rank among all aberrant responses in
/// the whole sample (1 = least aberrant), averaging ranks across exact-value
/// ties; non-aberrant units score 0.
///
/// With all-distinct aberrant responses the scores are exactly the integers
/// `1..=K` for K aberrant units. Comparison is exact 64-bit float equality.
pub fn aberrant_ranks(sample: &MatchedSample, spec: &AberrantSpec) -> ScoreVector {
    // Canonicalize so that "more aberrant" always means "larger response";
    // ranks are computed on the canonical scale.
    let (canon, cspec) = canonicalize(sample, spec);
    let mut aberrant: Vec<f64> = canon
        .strata
        .iter()
        .flat_map(|s| s.units.iter().map(|u| u.response))
        .filter(|&r| r >= cspec.cutoff)
        .collect();
    aberrant.sort_by(|a, b| a.partial_cmp(b).expect("responses validated finite"));

    let rank_of = |v: f64| -> f64 {
        // Average rank: (#strictly less) + (1 + #tied) / 2, counting within
        // the aberrant responses only.
        let less = aberrant.partition_point(|&x| x < v);
        let leq = aberrant.partition_point(|&x| x <= v);
        debug_assert!(leq > less, "aberrant value must occur in the pool");
        less as f64 + (1.0 + (leq - less) as f64) / 2.0
    };

    let scores = canon
        .strata
        .iter()
        .map(|s| {
            s.units
                .iter()
                .map(|u| {
                    if u.response >= cspec.cutoff {
                        rank_of(u.response)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    ScoreVector { scores }
}
