use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::IngestError;

/// A centred (optionally unit-variance) external series used as the moving
/// target of a quadratic schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestedSeries {
    pub column: String,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of the raw series.
    pub sigma: f64,
    /// Standard deviation of the raw first differences, comparable to a
    /// random-walk σ_env.
    pub sigma_increments: f64,
    pub normalized: bool,
    /// The series has zero variance; callers fall back to a static schedule.
    pub constant: bool,
}

pub fn ingest_series(path: &Path, column: &str, normalize: bool) -> Result<IngestedSeries, IngestError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| IngestError::Io(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| IngestError::Io(format!("{}: {e}", path.display())))?
        .clone();
    let idx = headers.iter().position(|h| h.trim() == column).ok_or_else(|| IngestError::MissingColumn {
        column: column.to_string(),
        available: headers.iter().collect::<Vec<_>>().join(", "),
    })?;
    let mut raw = Vec::new();
    for (k, record) in reader.records().enumerate() {
        // Row numbers count the header as row 1.
        let row = k + 2;
        let record = record.map_err(|e| IngestError::Parse {
            row,
            column: column.to_string(),
            detail: e.to_string(),
        })?;
        let cell = record.get(idx).unwrap_or("").trim();
        let v: f64 = cell.parse().map_err(|_| IngestError::Parse {
            row,
            column: column.to_string(),
            detail: format!("'{cell}' is not a number"),
        })?;
        if !v.is_finite() {
            return Err(IngestError::Parse {
                row,
                column: column.to_string(),
                detail: format!("'{cell}' is not finite"),
            });
        }
        raw.push(v);
    }
    prepare_series(column, &raw, normalize)
}

/// Centres `raw` and, if asked and possible, scales it to unit variance.
pub fn prepare_series(column: &str, raw: &[f64], normalize: bool) -> Result<IngestedSeries, IngestError> {
    if raw.len() < 2 {
        return Err(IngestError::EmptySeries { rows: raw.len() });
    }
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let sigma = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let diffs: Vec<f64> = raw.windows(2).map(|w| w[1] - w[0]).collect();
    let dmean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let sigma_increments = (diffs.iter().map(|d| (d - dmean).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
    // Rounding in the mean leaves a tiny σ for constant input, so test the values.
    let constant = raw.iter().all(|&v| v == raw[0]);
    let scale = if normalize && !constant { sigma } else { 1.0 };
    Ok(IngestedSeries {
        column: column.to_string(),
        values: raw.iter().map(|v| if constant { 0.0 } else { (v - mean) / scale }).collect(),
        mean,
        sigma: if constant { 0.0 } else { sigma },
        sigma_increments,
        normalized: normalize && !constant,
        constant,
    })
}
