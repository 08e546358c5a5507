use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;

/// One line of the outcome CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub rank: usize,
    pub subword: String,
    pub treated: bool,
    pub n_samples: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub iqr: f64,
    pub n_dropped_mismatch: usize,
}

pub fn outcomes_csv(rows: &[OutcomeRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record([
            "rank",
            "subword",
            "treated",
            "n_samples",
            "mean",
            "std",
            "median",
            "iqr",
            "n_dropped_mismatch",
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io {
        path: "<outcomes csv>".into(),
        source: e.into_error(),
    })
}

pub fn write_outcomes_csv(path: &Path, rows: &[OutcomeRow]) -> Result<()> {
    fsio::write_atomic(path, &outcomes_csv(rows)?)
}

pub fn parse_outcomes_csv(text: &str) -> Result<Vec<OutcomeRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

pub fn read_outcomes_csv(path: &Path) -> Result<Vec<OutcomeRow>> {
    parse_outcomes_csv(&fsio::read_to_string(path)?)
}
