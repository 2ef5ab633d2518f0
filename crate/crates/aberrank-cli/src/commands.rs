//! The four commands. Each returns the run record plus the flat table and
//! optional plot series the output layer may write alongside it.

use std::time::Instant;

use aberrank::adaptive::{adaptive_alpha_star, adaptive_test_full_matching, AdaptiveProblem};
use aberrank::designsens::{design_sensitivity_aberrant, design_sensitivity_mh};
use aberrank::sample::{
    aberrant_indicators, aberrant_ranks, validate, AberrantSpec, MatchedSample, ScoreVector,
};
use aberrank::senstests::{
    mh_worst_case, sensitivity_value, separability_worst_case, statistic, GammaGrid,
    SensitivityOutcome, WorstCaseMethod,
};
use aberrank::simlab::{estimate_power, estimate_size, GeneratorSpec, PowerConfig, Setting, TestKind};

use crate::args::{DesignArgs, DirectionChoice, ModelArgs, SimArgs, TestArgs, TestChoice};
use crate::plot::PlotSeries;
use crate::records::{
    DesignConfig, GammaSimResult, GammaTestResult, GeneratorConfig, RunRecord, SimConfig,
    TestConfig,
};
use crate::{csvio, CliError};

/// Everything a finished command hands to the output layer.
pub struct CommandOutput {
    pub record: RunRecord,
    /// Rows for `--table`, header first.
    pub table: Vec<Vec<String>>,
    /// Gamma-indexed series for `--plot`; absent when the command produces
    /// a single number rather than a curve.
    pub plot: Option<PlotSeries>,
}

const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Parses `start:stop:step` or a comma list into a gamma grid.
pub fn parse_gamma_grid(text: &str) -> Result<GammaGrid, CliError> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| CliError::Invalid(format!("unreadable gamma `{s}`")))
    };
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(CliError::Invalid(format!(
                "gamma range must be start:stop:step, got `{text}`"
            )));
        }
        Ok(GammaGrid::from_range(num(parts[0])?, num(parts[1])?, num(parts[2])?)?)
    } else {
        let values = text.split(',').map(num).collect::<Result<Vec<_>, _>>()?;
        Ok(GammaGrid::new(values)?)
    }
}

/// Resolves the generator flags into a spec and its record form.
fn resolve_generator(args: &ModelArgs) -> Result<(GeneratorSpec, GeneratorConfig), CliError> {
    if let Some(id) = args.setting {
        if args.m.is_some_and(|m| m != 2) {
            return Err(CliError::Invalid(
                "the paired construction fixes m = 2; drop --m".into(),
            ));
        }
        if args.cutoff.is_some() {
            return Err(CliError::Invalid(
                "the paired construction carries its own scores; --cutoff does not apply".into(),
            ));
        }
        let setting = match id {
            1 => Setting::S1,
            2 => Setting::S2,
            3 => Setting::S3,
            _ => unreachable!("argument range"),
        };
        let gen = GeneratorSpec::super_adaptivity(setting);
        let config = GeneratorConfig {
            model: None,
            setting: Some(id),
            beta: None,
            delta: None,
            m: gen.m,
            cutoff: gen.cutoff,
        };
        return Ok((gen, config));
    }
    let Some(model) = args.model else {
        return Err(CliError::Invalid(
            "choose a generator: --model 1-8 or --setting 1-3".into(),
        ));
    };
    let additive = matches!(model, 1 | 2 | 5 | 6);
    let effect = match (additive, args.beta, args.delta) {
        (true, Some(b), None) => b,
        (false, None, Some(d)) => d,
        (true, None, None) => {
            return Err(CliError::Invalid(format!(
                "model {model} has an additive effect; pass --beta"
            )))
        }
        (false, None, None) => {
            return Err(CliError::Invalid(format!(
                "model {model} has a multiplicative effect; pass --delta"
            )))
        }
        (true, _, Some(_)) => {
            return Err(CliError::Invalid(format!(
                "model {model} has an additive effect; --delta does not apply"
            )))
        }
        (false, Some(_), _) => {
            return Err(CliError::Invalid(format!(
                "model {model} has a multiplicative effect; --beta does not apply"
            )))
        }
    };
    let m = args.m.unwrap_or(4);
    let cutoff = args.cutoff.unwrap_or(1.0);
    let gen = GeneratorSpec::model(model, effect, m, cutoff)?;
    let config = GeneratorConfig {
        model: Some(model),
        setting: None,
        beta: additive.then_some(effect),
        delta: (!additive).then_some(effect),
        m,
        cutoff,
    };
    Ok((gen, config))
}

fn check_alpha(alpha: f64) -> Result<(), CliError> {
    if alpha > 0.0 && alpha < 0.5 {
        Ok(())
    } else {
        Err(CliError::Invalid(format!(
            "alpha must lie in (0, 0.5), got {alpha}"
        )))
    }
}

/// Worst-case level of the Bonferroni combination: twice the smaller
/// component p-value, capped at one.
fn bonferroni_p(
    sample: &MatchedSample,
    indicators: &ScoreVector,
    ranks: &ScoreVector,
    gamma: f64,
) -> Result<f64, CliError> {
    let p1 = separability_worst_case(sample, indicators, gamma)?.p_value;
    let p2 = separability_worst_case(sample, ranks, gamma)?.p_value;
    Ok((2.0 * p1.min(p2)).min(1.0))
}

/// Locates where a monotone per-gamma level first exceeds alpha along the
/// grid, refining the crossing to 1e-3 between the straddling grid points.
/// Mirrors the library's sensitivity-value search for the tests it does not
/// cover directly.
fn grid_crossing(
    gammas: &[f64],
    levels: &[f64],
    alpha: f64,
    mut level_at: impl FnMut(f64) -> Result<f64, CliError>,
) -> Result<SensitivityOutcome, CliError> {
    if levels[0] > alpha {
        return Ok(SensitivityOutcome::NotSignificant {
            p_at_grid_start: levels[0],
        });
    }
    for k in 1..gammas.len() {
        if levels[k] > alpha {
            let (mut lo, mut hi) = (gammas[k - 1], gammas[k]);
            while hi - lo > 1e-3 {
                let mid = 0.5 * (lo + hi);
                if level_at(mid)? <= alpha {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Ok(SensitivityOutcome::Crossing {
                gamma: 0.5 * (lo + hi),
            });
        }
    }
    Ok(SensitivityOutcome::ExceedsGrid {
        gamma_max: *gammas.last().expect("grids are nonempty"),
        p_at_grid_max: *levels.last().expect("grids are nonempty"),
    })
}

pub fn cmd_test(args: &TestArgs) -> Result<CommandOutput, CliError> {
    check_alpha(args.alpha)?;
    if args.test == TestChoice::Minimax {
        return Err(CliError::Invalid(
            "the minimax combination is simulation-only; choose mh, aberrant, adaptive, or bonferroni"
                .into(),
        ));
    }
    if !args.cutoff.is_finite() {
        return Err(CliError::Invalid(format!(
            "the test cutoff must be finite, got {}",
            args.cutoff
        )));
    }
    let start = Instant::now();
    let data = csvio::read_sample(&args.csv)?;
    validate(&data.sample)?;
    let spec = match args.direction {
        DirectionChoice::Ge => AberrantSpec::at_or_above(args.cutoff),
        DirectionChoice::Le => AberrantSpec::at_or_below(args.cutoff),
    };
    let grid = parse_gamma_grid(&args.gamma)?;
    let gammas = grid.values().to_vec();
    let indicators = aberrant_indicators(&data.sample, &spec);
    let ranks = aberrant_ranks(&data.sample, &spec);
    let observed = serde_json::json!({
        "indicator": statistic(&data.sample, &indicators)?,
        "rank": statistic(&data.sample, &ranks)?,
    });

    let mut fallback = false;
    let mut rows: Vec<GammaTestResult> = Vec::with_capacity(gammas.len());
    let component_row = |gamma: f64, p: f64, deviate: f64| GammaTestResult {
        gamma,
        alpha: args.alpha,
        p_value: Some(p),
        deviate: Some(deviate),
        alpha_star: None,
        rho_star: None,
        quantile: None,
        y_star: None,
        reject: p <= args.alpha,
    };
    match args.test {
        TestChoice::Mh => {
            for &g in &gammas {
                let wc = mh_worst_case(&data.sample, &spec, g)?;
                rows.push(component_row(g, wc.p_value, wc.deviate));
            }
        }
        TestChoice::Aberrant => {
            for &g in &gammas {
                let wc = separability_worst_case(&data.sample, &ranks, g)?;
                rows.push(component_row(g, wc.p_value, wc.deviate));
            }
        }
        TestChoice::Bonferroni => {
            for &g in &gammas {
                let p = bonferroni_p(&data.sample, &indicators, &ranks, g)?;
                rows.push(GammaTestResult {
                    gamma: g,
                    alpha: args.alpha,
                    p_value: Some(p),
                    deviate: None,
                    alpha_star: None,
                    rho_star: None,
                    quantile: None,
                    y_star: None,
                    reject: p <= args.alpha,
                });
            }
        }
        TestChoice::Adaptive => {
            for &g in &gammas {
                let problem = AdaptiveProblem::new(
                    data.sample.clone(),
                    indicators.clone(),
                    ranks.clone(),
                    g,
                    args.alpha,
                )?;
                let verdict = adaptive_test_full_matching(&problem)?;
                fallback |= verdict.flags.margin_fallback;
                let a_star = adaptive_alpha_star(&data.sample, &indicators, &ranks, g)?;
                rows.push(GammaTestResult {
                    gamma: g,
                    alpha: args.alpha,
                    p_value: None,
                    deviate: None,
                    alpha_star: Some(a_star),
                    rho_star: Some(verdict.rho_star),
                    quantile: Some(verdict.quantile),
                    // The fallback substitutes an infinite sign sentinel; the
                    // record keeps margins only when the cells resolved.
                    y_star: verdict.y_star.is_finite().then_some(verdict.y_star),
                    reject: verdict.reject,
                });
            }
        }
        TestChoice::Minimax => unreachable!("rejected before parsing the sample"),
    }

    let levels: Vec<f64> = rows
        .iter()
        .map(|r| r.alpha_star.or(r.p_value).expect("every row carries a level"))
        .collect();
    let sens = match args.test {
        TestChoice::Mh => sensitivity_value(
            &data.sample,
            &indicators,
            args.alpha,
            &grid,
            WorstCaseMethod::MantelHaenszel,
        )?,
        TestChoice::Aberrant => sensitivity_value(
            &data.sample,
            &ranks,
            args.alpha,
            &grid,
            WorstCaseMethod::Separability,
        )?,
        TestChoice::Bonferroni => grid_crossing(&gammas, &levels, args.alpha, |g| {
            bonferroni_p(&data.sample, &indicators, &ranks, g)
        })?,
        TestChoice::Adaptive => grid_crossing(&gammas, &levels, args.alpha, |g| {
            adaptive_alpha_star(&data.sample, &indicators, &ranks, g).map_err(CliError::from)
        })?,
        TestChoice::Minimax => unreachable!("rejected before parsing the sample"),
    };

    let level_name = if args.test == TestChoice::Adaptive {
        "alpha_star"
    } else {
        "p_value"
    };
    let mut table = vec![string_row(["gamma", "alpha", level_name, "reject"])];
    for (r, &level) in rows.iter().zip(&levels) {
        table.push(vec![
            r.gamma.to_string(),
            r.alpha.to_string(),
            level.to_string(),
            r.reject.to_string(),
        ]);
    }

    let plot = PlotSeries {
        title: format!("{} worst-case level by gamma", args.test.label()),
        y_label: level_name.to_string(),
        gammas: gammas.clone(),
        series: vec![(args.test.label().to_string(), levels)],
        reference: Some(("alpha".to_string(), args.alpha)),
    };

    let record = RunRecord {
        command: "test".into(),
        version: VERSION.into(),
        seed: None,
        config: serde_json::to_value(TestConfig {
            csv: args.csv.display().to_string(),
            test: args.test.label().into(),
            cutoff: args.cutoff,
            direction: match args.direction {
                DirectionChoice::Ge => "ge".into(),
                DirectionChoice::Le => "le".into(),
            },
            gamma: gammas,
            alpha: args.alpha,
        })?,
        results: serde_json::json!({
            "statistics": observed,
            "per_gamma": rows,
            "sensitivity_value": sens,
        }),
        timing_ms: start.elapsed().as_millis() as u64,
        solver_fallback: fallback,
    };
    Ok(CommandOutput {
        record,
        table,
        plot: Some(plot),
    })
}

pub fn cmd_design_sensitivity(args: &DesignArgs) -> Result<CommandOutput, CliError> {
    let start = Instant::now();
    let (gen, gen_config) = resolve_generator(&args.gen)?;
    let result = match args.test {
        crate::args::DesignTestChoice::Mh => {
            design_sensitivity_mh(&gen, args.tol, args.mc_samples, args.seed)?
        }
        crate::args::DesignTestChoice::Aberrant => {
            design_sensitivity_aberrant(&gen, args.tol, args.mc_samples, args.seed)?
        }
    };

    let table = vec![
        string_row([
            "test",
            "gamma_tilde",
            "bracket_lo",
            "bracket_hi",
            "std_error",
            "mc_samples",
            "empirical_marginals",
        ]),
        vec![
            args.test.label().to_string(),
            result.gamma_tilde.to_string(),
            result.bracket.0.to_string(),
            result.bracket.1.to_string(),
            result.std_error_estimate.to_string(),
            result.mc_samples.to_string(),
            result.empirical_marginals.to_string(),
        ],
    ];

    let record = RunRecord {
        command: "design-sensitivity".into(),
        version: VERSION.into(),
        seed: Some(args.seed),
        config: serde_json::to_value(DesignConfig {
            generator: gen_config,
            test: args.test.label().into(),
            mc_samples: args.mc_samples,
            tol: args.tol,
        })?,
        results: serde_json::json!({
            "test": args.test.label(),
            "design_sensitivity": result,
        }),
        timing_ms: start.elapsed().as_millis() as u64,
        solver_fallback: false,
    };
    Ok(CommandOutput {
        record,
        table,
        plot: None,
    })
}

pub fn cmd_power(args: &SimArgs) -> Result<CommandOutput, CliError> {
    run_sim(args, false)
}

pub fn cmd_size(args: &SimArgs) -> Result<CommandOutput, CliError> {
    run_sim(args, true)
}

fn run_sim(args: &SimArgs, size_run: bool) -> Result<CommandOutput, CliError> {
    let start = Instant::now();
    let (gen, gen_config) = resolve_generator(&args.gen)?;
    let grid = parse_gamma_grid(&args.gamma)?;
    let config = PowerConfig {
        gen,
        n_strata: args.strata,
        gammas: grid,
        alpha: args.alpha,
        replications: args.replications,
        seed: args.seed,
        test: match args.test {
            TestChoice::Mh => TestKind::MantelHaenszel,
            TestChoice::Aberrant => TestKind::AberrantRank,
            TestChoice::Adaptive => TestKind::Adaptive,
            TestChoice::Bonferroni => TestKind::Bonferroni,
            TestChoice::Minimax => TestKind::Minimax,
        },
    };
    let curve = if size_run {
        estimate_size(&config)?
    } else {
        estimate_power(&config)?
    };

    let rows: Vec<GammaSimResult> = curve
        .gammas
        .iter()
        .zip(curve.power.iter().zip(&curve.std_error))
        .map(|(&gamma, (&power, &std_error))| GammaSimResult {
            gamma,
            alpha: args.alpha,
            power,
            std_error,
        })
        .collect();

    let mut table = vec![string_row(["gamma", "alpha", "power", "std_error"])];
    for r in &rows {
        table.push(vec![
            r.gamma.to_string(),
            r.alpha.to_string(),
            r.power.to_string(),
            r.std_error.to_string(),
        ]);
    }

    let command = if size_run { "size" } else { "power" };
    let plot = PlotSeries {
        title: format!("{} of the {} test by gamma", command, args.test.label()),
        y_label: "rejection rate".into(),
        gammas: curve.gammas.clone(),
        series: vec![(args.test.label().to_string(), curve.power.clone())],
        reference: Some(("alpha".to_string(), args.alpha)),
    };

    let record = RunRecord {
        command: command.into(),
        version: VERSION.into(),
        seed: Some(args.seed),
        config: serde_json::to_value(SimConfig {
            generator: gen_config,
            test: args.test.label().into(),
            strata: args.strata,
            gamma: curve.gammas.clone(),
            alpha: args.alpha,
            replications: args.replications,
        })?,
        results: serde_json::json!({
            "test": args.test.label(),
            "per_gamma": rows,
            "replications": curve.replications,
            "degenerate_replications": curve.degenerate_replications,
        }),
        timing_ms: start.elapsed().as_millis() as u64,
        solver_fallback: false,
    };
    Ok(CommandOutput {
        record,
        table,
        plot: Some(plot),
    })
}

fn string_row<const N: usize>(cells: [&str; N]) -> Vec<String> {
    cells.iter().map(|c| c.to_string()).collect()
}
