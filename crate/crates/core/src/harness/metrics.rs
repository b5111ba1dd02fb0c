//! Metrics records, JSONL streams and CSV export.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One logged point. Fields a run does not produce are omitted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    /// Running mean of the squared gradient norm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_norm_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparsity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bpp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Mean off-diagonal layer similarity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lsm_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
}

impl MetricsRecord {
    pub fn at(step: u64) -> Self {
        Self {
            step,
            ..Self::default()
        }
    }
}

const CSV_COLUMNS: [&str; 12] = [
    "step",
    "loss",
    "accuracy",
    "f1",
    "grad_norm_mean",
    "sparsity",
    "bpp",
    "beta",
    "lsm_mean",
    "lr",
    "eps",
    "w",
];

/// Parses one JSONL line against the record schema.
pub fn parse_record(line: &str) -> Result<MetricsRecord> {
    Ok(serde_json::from_str(line)?)
}

pub fn parse_stream(text: &str) -> Result<Vec<MetricsRecord>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(parse_record).collect()
}

/// Collects records in memory and enforces strictly increasing steps.
#[derive(Clone, Debug, Default)]
pub struct MetricsLog {
    records: Vec<MetricsRecord>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: MetricsRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.step <= last.step {
                return Err(Error::Config(format!(
                    "metrics step {} does not follow {}",
                    record.step, last.step
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<MetricsRecord> {
        self.records
    }

    pub fn to_jsonl(&self) -> String {
        to_jsonl(&self.records)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(self.to_jsonl().as_bytes())?;
        w.flush()?;
        Ok(())
    }
}

pub fn to_jsonl(records: &[MetricsRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// All schema columns, empty where a record has no value.
pub fn to_csv(records: &[MetricsRecord]) -> String {
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        let row = [
            r.step.to_string(),
            cell(r.loss),
            cell(r.accuracy),
            cell(r.f1),
            cell(r.grad_norm_mean),
            cell(r.sparsity),
            cell(r.bpp),
            cell(r.beta),
            cell(r.lsm_mean),
            cell(r.lr),
            cell(r.eps),
            cell(r.w),
        ];
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
