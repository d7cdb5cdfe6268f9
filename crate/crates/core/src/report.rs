//! File exports: grayscale heatmaps, candidate reports and run manifests.

use std::io::Write;
use std::path::PathBuf;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::anomaly::{AnomalyCandidate, FilterConfig};
use crate::error::Result;
use crate::rpca::SolverOptions;

/// Writes a binary PGM (P5) heatmap. Values map linearly from `[0, max]` to
/// gray `[255, 0]`, so higher latency is darker. Values outside the range
/// are clamped; a non-positive `max` renders everything white.
pub fn write_pgm<W: Write>(mut writer: W, m: &DMatrix<f64>, max: f64) -> Result<()> {
    let (rows, cols) = m.shape();
    write!(writer, "P5\n{cols} {rows}\n255\n")?;
    let mut pixels = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            pixels.push(gray_level(m[(i, j)], max));
        }
    }
    writer.write_all(&pixels)?;
    Ok(())
}

pub fn gray_level(value: f64, max: f64) -> u8 {
    if !(max > 0.0) || !value.is_finite() {
        return 255;
    }
    let t = (value / max).clamp(0.0, 1.0);
    (255.0 * (1.0 - t)).round() as u8
}

/// Largest finite entry across several matrices, floored at 0.
pub fn shared_max<'a>(matrices: impl IntoIterator<Item = &'a DMatrix<f64>>) -> f64 {
    matrices
        .into_iter()
        .flat_map(|m| m.iter())
        .filter(|v| v.is_finite())
        .fold(0.0, |a, &b| a.max(b))
}

/// JSON candidate report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateReport {
    pub matrix_id: String,
    pub config: FilterConfig,
    pub candidates: Vec<AnomalyCandidate>,
}

pub const CANDIDATE_HEADER: [&str; 13] = [
    "matrix_id",
    "row",
    "col",
    "row_id",
    "col_id",
    "measured_ms",
    "expected_ms",
    "inflation_ms",
    "ratio",
    "filters",
    "interpolated",
    "below_floor",
    "severity_rank",
];

impl CandidateReport {
    /// Flat CSV export; `filters` joined with `|`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(CANDIDATE_HEADER)?;
        for c in &self.candidates {
            let filters: Vec<&str> = c.filters.iter().map(|f| f.name()).collect();
            wtr.write_record([
                self.matrix_id.clone(),
                c.row.to_string(),
                c.col.to_string(),
                c.row_id.clone(),
                c.col_id.clone(),
                c.measured_ms.to_string(),
                c.expected_ms.to_string(),
                c.inflation_ms.to_string(),
                c.ratio.to_string(),
                filters.join("|"),
                c.interpolated.to_string(),
                c.below_floor.to_string(),
                c.severity_rank.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Configuration echoed into every manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub solver: SolverOptions,
    pub filter: FilterConfig,
    pub min_ips: usize,
    pub interpolate: bool,
    pub seed: u64,
}

/// Record of one command invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub config: ConfigEcho,
    pub warnings: Vec<String>,
    /// Command-specific numbers (solver diagnostics, missing fractions, ...).
    pub summary: serde_json::Map<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str, config: ConfigEcho, started_at: String) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at,
            finished_at: String::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            config,
            warnings: Vec::new(),
            summary: serde_json::Map::new(),
        }
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.summary.insert(
            key.to_string(),
            serde_json::to_value(value).unwrap_or(serde_json::Value::Null),
        );
    }
}
