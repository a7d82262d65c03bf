//! Per-step curve logs and per-run summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Metric;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    /// Stage-1 signals on the train part of the target batch.
    Meta,
    /// Stage-2 signals and the weights used for the real update.
    Train,
}

/// One `(step, task)` row. Column order is the CSV schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: u64,
    pub phase: Phase,
    pub task_id: usize,
    pub loss: f64,
    pub weight: f64,
    pub sim: Option<f64>,
    pub valid_metric: Option<f64>,
}

pub const CSV_HEADER: &str = "step,phase,task_id,loss,weight,sim,valid_metric";

/// Everything a single seeded run produces.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    #[serde(skip)]
    pub rows: Vec<CurveRow>,
    pub test_metrics: BTreeMap<Metric, f64>,
    pub best_valid: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
    pub wall_clock_secs: f64,
    pub fingerprint: String,
    /// Set when the divergence guard stopped the run.
    pub aborted: Option<String>,
}

impl RunRecord {
    pub fn completed(&self) -> bool {
        self.aborted.is_none()
    }
}

pub fn write_csv(rows: &[CurveRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    if rows.is_empty() {
        return Ok(format!("{CSV_HEADER}\n"));
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn parse_csv(text: &str) -> Result<Vec<CurveRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::Format(e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(Error::Format(format!("unexpected curve header `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Format(e.to_string())))
        .collect()
}
