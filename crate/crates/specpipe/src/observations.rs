//! Measured throughput tables.
//!
//! CSV with a header containing at least `bs_prefill, bs_decoding, bs_draft,
//! n_cand, throughput`; an optional `no` column labels rows, other columns
//! are ignored.

use std::path::Path;

use serde::Deserialize;
use specpipe_core::planner::Observation;
use specpipe_core::Policy;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    /// Label from the `no` column, else the 1-based line index.
    pub no: u32,
    pub obs: Observation,
}

#[derive(Debug, Deserialize)]
struct Record {
    no: Option<u32>,
    bs_prefill: u32,
    bs_decoding: u32,
    bs_draft: u32,
    n_cand: u32,
    throughput: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum ObservationError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("observations row {row}: {message}")]
    Row { row: usize, message: String },
}

pub fn parse(text: &str) -> Result<Vec<Row>, ObservationError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<Record>().enumerate() {
        let r = rec.map_err(|e| ObservationError::Row {
            row: i + 1,
            message: e.to_string(),
        })?;
        let policy = Policy::new(r.bs_prefill, r.bs_decoding, r.bs_draft, r.n_cand);
        policy.validate().map_err(|e| ObservationError::Row {
            row: i + 1,
            message: e.to_string(),
        })?;
        out.push(Row {
            no: r.no.unwrap_or(i as u32 + 1),
            obs: Observation {
                policy,
                throughput: r.throughput,
            },
        });
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<Vec<Row>, ObservationError> {
    let text = std::fs::read_to_string(path).map_err(|source| ObservationError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse(&text)
}

/// `k` row indices spread evenly over `0..n`, first and last included.
pub fn spread(n: usize, k: usize) -> Vec<usize> {
    match k {
        0 => Vec::new(),
        _ if k >= n => (0..n).collect(),
        1 => vec![0],
        _ => (0..k)
            .map(|i| ((i * (n - 1)) as f64 / (k - 1) as f64).round() as usize)
            .collect(),
    }
}
