//! Command-line grammar. Parsing stops at syntax; cross-flag rules like
//! "model 3 takes --delta, not --beta" live in the command layer where they
//! can name the offending combination.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::DEFAULT_SEED;

/// Sensitivity analysis for treatment effects on aberrant outcomes in
/// matched observational studies.
#[derive(Debug, Parser)]
#[command(name = "aberrank", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test a matched CSV sample and locate its sensitivity value.
    Test(TestArgs),
    /// Solve a test's design sensitivity under a data-generating model.
    DesignSensitivity(DesignArgs),
    /// Estimate sensitivity-analysis power on a gamma grid by simulation.
    Power(SimArgs),
    /// Estimate size under a null effect on a gamma grid by simulation.
    Size(SimArgs),
}

/// Tests addressable from the command line. The minimax combination skips
/// the correlation stage and is only meaningful in simulation studies, so
/// `test` refuses it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TestChoice {
    /// Aberrance-indicator statistic with its worst-case Bernoulli bound.
    Mh,
    /// Aberrant-rank statistic with the separability bound.
    Aberrant,
    /// Two-stage adaptive combination of the indicator and rank statistics.
    Adaptive,
    /// Bonferroni combination of the two component tests.
    Bonferroni,
    /// One-sided minimax combination at a fixed critical value.
    Minimax,
}

impl TestChoice {
    pub fn label(self) -> &'static str {
        match self {
            TestChoice::Mh => "mh",
            TestChoice::Aberrant => "aberrant",
            TestChoice::Adaptive => "adaptive",
            TestChoice::Bonferroni => "bonferroni",
            TestChoice::Minimax => "minimax",
        }
    }
}

/// Which side of the cutoff counts as aberrant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DirectionChoice {
    /// Responses at or above the cutoff.
    Ge,
    /// Responses at or below the cutoff.
    Le,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// Input CSV with header `stratum,treated,response`.
    pub csv: PathBuf,

    /// Which test to run.
    #[arg(long, value_enum)]
    pub test: TestChoice,

    /// Cutoff defining the aberrant outcome region.
    #[arg(long, allow_hyphen_values = true)]
    pub cutoff: f64,

    /// Side of the cutoff that is aberrant.
    #[arg(long, value_enum, default_value = "ge")]
    pub direction: DirectionChoice,

    /// Gamma grid: `start:stop:step` or a comma list like `1,1.5,2`.
    #[arg(long, default_value = "1:8:0.25")]
    pub gamma: String,

    /// Level the sensitivity value is computed at.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,

    #[command(flatten)]
    pub out: OutputArgs,
}

/// Flags choosing a data-generating process: a numbered model with its
/// effect size, or a paired score-difference construction.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Data-generating model 1-8.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=8))]
    pub model: Option<u8>,

    /// Additive effect, for models 1, 2, 5, 6.
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Option<f64>,

    /// Multiplicative effect, for models 3, 4, 7, 8.
    #[arg(long, allow_hyphen_values = true)]
    pub delta: Option<f64>,

    /// Paired score-difference construction 1-3 instead of a model.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3), conflicts_with_all = ["model", "beta", "delta"])]
    pub setting: Option<u8>,

    /// Units per matched set (one treated plus m-1 controls).
    #[arg(long)]
    pub m: Option<usize>,

    /// Aberrance cutoff; responses at or above it are aberrant, and `-inf`
    /// recovers plain rank scores.
    #[arg(long, allow_hyphen_values = true)]
    pub cutoff: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[command(flatten)]
    pub gen: ModelArgs,

    /// Whose design sensitivity to solve.
    #[arg(long, value_enum)]
    pub test: DesignTestChoice,

    /// Monte-Carlo matched-set draws behind the moment equation.
    #[arg(long, default_value_t = 100_000)]
    pub mc_samples: usize,

    /// Bisection tolerance on gamma.
    #[arg(long, default_value_t = 0.01)]
    pub tol: f64,

    /// RNG seed; fixed default, never the wall clock.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,

    #[command(flatten)]
    pub out: OutputArgs,
}

/// The two tests with a moment-equation design sensitivity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DesignTestChoice {
    Mh,
    Aberrant,
}

impl DesignTestChoice {
    pub fn label(self) -> &'static str {
        match self {
            DesignTestChoice::Mh => "mh",
            DesignTestChoice::Aberrant => "aberrant",
        }
    }
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[command(flatten)]
    pub gen: ModelArgs,

    /// Which test's rejection rate to estimate.
    #[arg(long, value_enum)]
    pub test: TestChoice,

    /// Matched sets per simulated sample.
    #[arg(long)]
    pub strata: usize,

    /// Gamma grid: `start:stop:step` or a comma list.
    #[arg(long)]
    pub gamma: String,

    /// Test level.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,

    /// Simulation replications per grid point.
    #[arg(long, default_value_t = 2000)]
    pub replications: usize,

    /// RNG seed; fixed default, never the wall clock.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,

    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Clone, Debug, Args)]
pub struct OutputArgs {
    /// Write the JSON run record here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,

    /// Also write the results as a flat CSV grid.
    #[arg(long)]
    pub table: Option<PathBuf>,

    /// Also write a static SVG of the gamma-indexed results.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}
