//! CSV outputs. Every table has a header row and re-parses to the values
//! it was written from.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use cadlab_core::analysis::{GroupAuc, NceReport};
use cadlab_core::metrics::MetricsReport;
use cadlab_core::train::EpochLoss;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::Error;

pub fn write_rows<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: DeserializeOwned, R: Read>(input: R) -> Result<Vec<T>, Error> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn save_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<(), Error> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_rows(rows, f).map_err(|e| e.in_file(path))
}

pub fn load_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, Error> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_rows(f).map_err(|e| e.in_file(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub stage: String,
    pub epoch: usize,
    pub total: f64,
    pub ce: f64,
    pub gce: Option<f64>,
    pub counterfactual: Option<f64>,
}

impl LossRow {
    pub fn new(stage: &str, l: &EpochLoss) -> Self {
        LossRow {
            stage: stage.into(),
            epoch: l.epoch,
            total: l.total,
            ce: l.ce,
            gce: l.gce,
            counterfactual: l.counterfactual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    pub bootstrap_mean: f64,
    pub bootstrap_std: f64,
}

pub fn metric_rows(r: &MetricsReport) -> Vec<MetricRow> {
    [
        ("auc_roc", r.auc_roc, &r.auc_roc_boot),
        ("auc_prc", r.auc_prc, &r.auc_prc_boot),
        ("accuracy", r.accuracy, &r.accuracy_boot),
    ]
    .into_iter()
    .map(|(name, value, b)| MetricRow {
        metric: name.into(),
        value,
        bootstrap_mean: b.mean,
        bootstrap_std: b.std,
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NceRow {
    /// Mask bits, `1` observed, modality 0 first.
    pub pattern: String,
    pub count: usize,
    /// Label counts joined by `;`.
    pub labels: String,
    pub nce: f64,
}

pub fn nce_rows(r: &NceReport) -> Vec<NceRow> {
    r.patterns
        .iter()
        .map(|p| NceRow {
            pattern: p.pattern.iter().map(|&b| if b { '1' } else { '0' }).collect(),
            count: p.count,
            labels: p
                .label_histogram
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(";"),
            nce: p.nce,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

pub fn bucket_rows(r: &NceReport) -> Vec<BucketRow> {
    use cadlab_core::analysis::NCE_BUCKET;
    r.bucket_counts
        .iter()
        .enumerate()
        .map(|(i, &count)| BucketRow {
            low: i as f64 * NCE_BUCKET,
            high: (i + 1) as f64 * NCE_BUCKET,
            count,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: usize,
    pub count: usize,
    /// Empty when the group lacks a class.
    pub auc_roc: Option<f64>,
}

pub fn group_rows(g: &[GroupAuc]) -> Vec<GroupRow> {
    g.iter()
        .map(|g| GroupRow {
            group: g.group,
            count: g.count,
            auc_roc: g.auc,
        })
        .collect()
}
