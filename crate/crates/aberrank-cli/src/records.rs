//! The machine-readable run record every command emits: what was asked,
//! with every default resolved, and what came out, with each number tagged
//! by the gamma and alpha it was computed at.

use serde::{Deserialize, Serialize};

/// One completed run. Serializing and reparsing is lossless, and rerunning
/// the same command with the embedded config and seed reproduces `results`
/// exactly; only `timing_ms` varies between such runs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    /// Subcommand name.
    pub command: String,
    /// Tool version the record came from.
    pub version: String,
    /// RNG seed behind any randomized result; absent for the deterministic
    /// `test` command.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Fully resolved configuration, defaults included.
    pub config: serde_json::Value,
    pub results: serde_json::Value,
    /// Wall-clock duration of the computation.
    pub timing_ms: u64,
    /// Some reported verdict came from the Bonferroni fallback rather than
    /// a clean cell solve; the process exits with code 3 when set.
    pub solver_fallback: bool,
}

/// JSON-safe float encoding: finite values stay numbers, infinities become
/// the strings `"inf"` / `"-inf"` instead of JSON null.
pub mod extended_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v < 0.0 {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) => t.trim().parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Resolved configuration of a `test` run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TestConfig {
    pub csv: String,
    pub test: String,
    #[serde(with = "extended_float")]
    pub cutoff: f64,
    pub direction: String,
    pub gamma: Vec<f64>,
    pub alpha: f64,
}

/// Resolved data-generating process shared by the model commands.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratorConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub setting: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub m: usize,
    #[serde(with = "extended_float")]
    pub cutoff: f64,
}

/// Resolved configuration of a `design-sensitivity` run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DesignConfig {
    #[serde(flatten)]
    pub generator: GeneratorConfig,
    pub test: String,
    pub mc_samples: usize,
    pub tol: f64,
}

/// Resolved configuration of a `power` or `size` run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(flatten)]
    pub generator: GeneratorConfig,
    pub test: String,
    pub strata: usize,
    pub gamma: Vec<f64>,
    pub alpha: f64,
    pub replications: usize,
}

/// One grid point of a `test` run. Component tests report a worst-case
/// p-value and deviate; the adaptive test reports the smallest level it
/// rejects at, with its correlation stage and margin attached.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GammaTestResult {
    pub gamma: f64,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deviate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quantile: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_star: Option<f64>,
    pub reject: bool,
}

/// One grid point of a simulation run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GammaSimResult {
    pub gamma: f64,
    pub alpha: f64,
    pub power: f64,
    pub std_error: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinite_cutoffs_survive_the_json_round_trip() {
        let config = GeneratorConfig {
            model: Some(1),
            setting: None,
            beta: Some(0.5),
            delta: None,
            m: 2,
            cutoff: f64::NEG_INFINITY,
        };
        let text = serde_json::to_string(&config).unwrap();
        assert!(text.contains("\"-inf\""));
        let back: GeneratorConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.cutoff, f64::NEG_INFINITY);

        let finite = GeneratorConfig {
            cutoff: 1.25,
            ..config
        };
        let text = serde_json::to_string(&finite).unwrap();
        let back: GeneratorConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.cutoff, 1.25);
    }

    #[test]
    fn run_records_reparse_to_the_same_json_value() {
        let record = RunRecord {
            command: "power".into(),
            version: "0.1.0".into(),
            seed: Some(42),
            config: serde_json::json!({"strata": 100, "gamma": [1.0, 2.0]}),
            results: serde_json::json!([{"gamma": 1.0, "alpha": 0.05, "power": 0.9375}]),
            timing_ms: 12,
            solver_fallback: false,
        };
        let text = serde_json::to_string_pretty(&record).unwrap();
        let back: RunRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(
            serde_json::to_value(&record).unwrap(),
            serde_json::to_value(&back).unwrap()
        );
    }
}
