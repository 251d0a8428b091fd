use std::io::Write;

use serde::Serialize;

use crate::error::Result;

/// Column order of the telemetry CSV.
pub const TELEMETRY_COLUMNS: &str =
    "epoch,step,lr,clusters,outliers,pcl_g,pcl_p,hcl_g,hcl_p,wrccl,ccl,id,triplet,total,degenerate";

/// Batch-mean loss terms and bookkeeping for one optimizer step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub clusters: usize,
    pub outliers: usize,
    pub pcl_g: f64,
    pub pcl_p: f64,
    pub hcl_g: f64,
    pub hcl_p: f64,
    pub wrccl: f64,
    pub ccl: f64,
    pub id: f64,
    pub triplet: f64,
    pub total: f64,
    /// Queries whose hybrid loss had no negatives.
    pub degenerate: usize,
}

impl StepRecord {
    pub fn write_csv_row<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.step,
            self.lr,
            self.clusters,
            self.outliers,
            self.pcl_g,
            self.pcl_p,
            self.hcl_g,
            self.hcl_p,
            self.wrccl,
            self.ccl,
            self.id,
            self.triplet,
            self.total,
            self.degenerate
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub clusters: usize,
    pub outliers: usize,
    pub steps: Vec<StepRecord>,
}

impl EpochSummary {
    pub fn mean_loss(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.total).sum::<f64>() / self.steps.len() as f64
    }
}

/// Writes the `#`-prefixed config line and the column header.
pub fn write_header<W: Write, C: Serialize>(mut out: W, config: &C) -> Result<()> {
    writeln!(out, "# config {}", serde_json::to_string(config)?)?;
    writeln!(out, "{TELEMETRY_COLUMNS}")?;
    Ok(())
}

pub fn write_epoch<W: Write>(mut out: W, summary: &EpochSummary) -> Result<()> {
    for s in &summary.steps {
        s.write_csv_row(&mut out)?;
    }
    Ok(())
}
