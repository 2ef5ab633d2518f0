//! Matched-sample CSV: header `stratum,treated,response`, one unit per row.
//! Stratum labels are opaque strings grouped by first appearance, so a
//! parse-write cycle preserves membership, flags, and responses exactly.

use std::collections::HashMap;
use std::path::Path;

use aberrank::sample::MatchedSample;

use crate::CliError;

/// A matched sample with the stratum labels it arrived with, aligned by
/// index with `sample.strata`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub sample: MatchedSample,
    pub labels: Vec<String>,
}

const HEADER: [&str; 3] = ["stratum", "treated", "response"];

fn bad_row(path: &Path, line: u64, message: impl Into<String>) -> CliError {
    CliError::Csv {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

pub fn read_sample(path: &Path) -> Result<LabeledSample, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad_row(path, 1, e.to_string()))?;

    let headers = reader
        .headers()
        .map_err(|e| bad_row(path, 1, e.to_string()))?;
    let got: Vec<String> = headers.iter().map(|h| h.to_ascii_lowercase()).collect();
    if got != HEADER {
        return Err(bad_row(
            path,
            1,
            format!("expected header `stratum,treated,response`, got `{}`", got.join(",")),
        ));
    }

    let mut stratum_index: HashMap<String, usize> = HashMap::new();
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<(bool, f64)>> = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| {
            let line = e.position().map_or(0, csv::Position::line);
            bad_row(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, csv::Position::line);
        if record.len() != 3 {
            return Err(bad_row(path, line, format!("expected 3 fields, got {}", record.len())));
        }
        let label = &record[0];
        if label.is_empty() {
            return Err(bad_row(path, line, "empty stratum label"));
        }
        let treated = match &record[1] {
            "0" => false,
            "1" => true,
            other if other.eq_ignore_ascii_case("false") => false,
            other if other.eq_ignore_ascii_case("true") => true,
            other => {
                return Err(bad_row(
                    path,
                    line,
                    format!("treated must be 0, 1, true, or false, got `{other}`"),
                ))
            }
        };
        let response: f64 = record[2]
            .parse()
            .map_err(|_| bad_row(path, line, format!("unreadable response `{}`", &record[2])))?;
        if !response.is_finite() {
            return Err(bad_row(path, line, format!("non-finite response {response}")));
        }
        let idx = *stratum_index.entry(label.to_string()).or_insert_with(|| {
            labels.push(label.to_string());
            rows.push(Vec::new());
            rows.len() - 1
        });
        rows[idx].push((treated, response));
    }
    if rows.is_empty() {
        return Err(bad_row(path, 1, "no data rows"));
    }
    Ok(LabeledSample {
        sample: MatchedSample::from_rows(rows),
        labels,
    })
}

pub fn write_sample(data: &LabeledSample, path: &Path) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| bad_row(path, 0, e.to_string()))?;
    writer
        .write_record(HEADER)
        .map_err(|e| bad_row(path, 0, e.to_string()))?;
    for (label, stratum) in data.labels.iter().zip(&data.sample.strata) {
        for unit in &stratum.units {
            writer
                .write_record([
                    label.as_str(),
                    if unit.treated { "1" } else { "0" },
                    &unit.response.to_string(),
                ])
                .map_err(|e| bad_row(path, 0, e.to_string()))?;
        }
    }
    writer.flush()?;
    Ok(())
}
