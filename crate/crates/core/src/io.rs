//! CSV and JSON table formats, written atomically.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{CorrelationReport, ScoreTable, TransferRecord};
use crate::metrics::Orientation;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// `.json` selects JSON; anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

/// One row of a score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub model: String,
    pub bundle: String,
    pub metric: String,
    pub value: f64,
    pub wall_time_s: Option<f64>,
}

/// One row of a distance file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub source: String,
    pub target: String,
    pub metric: String,
    pub value: f64,
    pub wall_time_s: Option<f64>,
}

/// One row of an evaluation score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScoreRow {
    pub candidate: String,
    pub metric: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<Orientation>,
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), TableError> {
    let io = |source| TableError::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(w.into_inner().expect("flushed"))
}

/// Header-only output must still carry the header line.
pub fn csv_bytes_with_header<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>, csv::Error> {
    if rows.is_empty() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        w.flush()?;
        return Ok(w.into_inner().expect("flushed"));
    }
    csv_bytes(rows)
}

pub fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, serde_json::Error> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_table<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), TableError> {
    let p = path.display().to_string();
    let bytes = match Format::from_path(path) {
        Format::Csv => csv_bytes_with_header(rows, header).map_err(|source| TableError::Csv { path: p, source })?,
        Format::Json => json_bytes(rows).map_err(|source| TableError::Json { path: p, source })?,
    };
    write_atomic(path, &bytes)
}

pub fn read_table<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, TableError> {
    let p = path.display().to_string();
    match Format::from_path(path) {
        Format::Csv => {
            let mut r = csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .from_path(path)
                .map_err(|source| TableError::Csv { path: p.clone(), source })?;
            r.deserialize()
                .collect::<Result<_, _>>()
                .map_err(|source| TableError::Csv { path: p, source })
        }
        Format::Json => {
            let text = fs::read(path).map_err(|source| TableError::Io { path: p.clone(), source })?;
            serde_json::from_slice(&text).map_err(|source| TableError::Json { path: p, source })
        }
    }
}

pub const SCORE_HEADER: [&str; 5] = ["model", "bundle", "metric", "value", "wall_time_s"];
pub const DISTANCE_HEADER: [&str; 5] = ["source", "target", "metric", "value", "wall_time_s"];
pub const PERF_HEADER: [&str; 3] = ["candidate", "perf_p", "perf_ri"];
pub const CANDIDATE_SCORE_HEADER: [&str; 3] = ["candidate", "metric", "value"];

pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<(), TableError> {
    write_table(path, rows, &SCORE_HEADER)
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>, TableError> {
    read_table(path)
}

pub fn write_distances(path: &Path, rows: &[DistanceRow]) -> Result<(), TableError> {
    write_table(path, rows, &DISTANCE_HEADER)
}

pub fn read_distances(path: &Path) -> Result<Vec<DistanceRow>, TableError> {
    read_table(path)
}

pub fn write_perf(path: &Path, rows: &[TransferRecord]) -> Result<(), TableError> {
    write_table(path, rows, &PERF_HEADER)
}

pub fn read_perf(path: &Path) -> Result<Vec<TransferRecord>, TableError> {
    read_table(path)
}

pub fn write_candidate_scores(path: &Path, rows: &[CandidateScoreRow]) -> Result<(), TableError> {
    write_table(path, rows, &CANDIDATE_SCORE_HEADER)
}

pub fn read_candidate_scores(path: &Path) -> Result<Vec<CandidateScoreRow>, TableError> {
    read_table(path)
}

/// Builds a score table; rows without an orientation fall back to
/// `default_orientation(metric)`.
pub fn score_table(rows: &[CandidateScoreRow], default_orientation: impl Fn(&str) -> Orientation) -> ScoreTable {
    let mut table = ScoreTable::default();
    for r in rows {
        table.push(&r.candidate, &r.metric, r.value);
        let o = r.orientation.unwrap_or_else(|| default_orientation(&r.metric));
        table.orientations.insert(r.metric.clone(), o);
    }
    table
}

pub fn write_report(path: &Path, report: &CorrelationReport) -> Result<(), TableError> {
    let bytes = json_bytes(report).map_err(|source| TableError::Json {
        path: path.display().to_string(),
        source,
    })?;
    write_atomic(path, &bytes)
}

pub fn read_report(path: &Path) -> Result<CorrelationReport, TableError> {
    let p = path.display().to_string();
    let text = fs::read(path).map_err(|source| TableError::Io { path: p.clone(), source })?;
    serde_json::from_slice(&text).map_err(|source| TableError::Json { path: p, source })
}
