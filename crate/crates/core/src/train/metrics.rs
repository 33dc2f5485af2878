use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of the per-epoch metric stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: u64,
    /// Mean training-mode loss over the epoch's mini-batches.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
    /// Gradient information per dense layer; empty on epochs not probed.
    pub grad_info: Vec<f64>,
    /// Saturation fraction per probe point; empty when not tracked.
    pub saturation: Vec<f64>,
    pub seconds: f64,
}

/// Append-only per-epoch log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    dense_layers: usize,
    probe_points: usize,
    rows: Vec<EpochMetrics>,
}

impl MetricsLog {
    pub fn new(dense_layers: usize, probe_points: usize) -> Self {
        Self {
            dense_layers,
            probe_points,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: EpochMetrics) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.epoch <= last.epoch {
                return Err(Error::state(format!(
                    "epoch {} appended after epoch {}",
                    row.epoch, last.epoch
                )));
            }
        }
        if !row.grad_info.is_empty() && row.grad_info.len() != self.dense_layers {
            return Err(Error::Consistency(format!(
                "{} gradient-information values for {} dense layers",
                row.grad_info.len(),
                self.dense_layers
            )));
        }
        if !row.saturation.is_empty() && row.saturation.len() != self.probe_points {
            return Err(Error::Consistency(format!(
                "{} saturation values for {} probe points",
                row.saturation.len(),
                self.probe_points
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[EpochMetrics] {
        &self.rows
    }

    pub fn last(&self) -> Option<&EpochMetrics> {
        self.rows.last()
    }

    pub fn row(&self, epoch: u64) -> Option<&EpochMetrics> {
        self.rows.iter().find(|r| r.epoch == epoch)
    }

    pub fn dense_layers(&self) -> usize {
        self.dense_layers
    }

    pub fn probe_points(&self) -> usize {
        self.probe_points
    }

    pub fn csv_header(&self) -> String {
        let mut h = String::from(
            "epoch,train_loss,train_accuracy,val_loss,val_accuracy,test_loss,test_accuracy",
        );
        for k in 1..=self.dense_layers {
            let _ = write!(h, ",grad_info_{k}");
        }
        for k in 1..=self.probe_points {
            let _ = write!(h, ",saturation_{k}");
        }
        h
    }

    /// CSV with a header row. Reals use Rust's shortest round-trip
    /// formatting; missing values are empty fields. Wall-clock time is
    /// deliberately excluded so the file is reproducible.
    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch,
                r.train_loss,
                r.train_accuracy,
                opt(r.val_loss),
                opt(r.val_accuracy),
                opt(r.test_loss),
                opt(r.test_accuracy)
            );
            push_list(&mut out, &r.grad_info, self.dense_layers);
            push_list(&mut out, &r.saturation, self.probe_points);
            out.push('\n');
        }
        out
    }

    /// `epoch,seconds` rows.
    pub fn timing_csv(&self) -> String {
        let mut out = String::from("epoch,seconds\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{}", r.epoch, r.seconds);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn push_list(out: &mut String, values: &[f64], width: usize) {
    for i in 0..width {
        out.push(',');
        if let Some(v) = values.get(i) {
            let _ = write!(out, "{v}");
        }
    }
}
