//! Long-format result tables with CSV and JSON mirrors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{io_err, HarnessResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub setting: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    /// Number of aggregated values.
    pub n: usize,
    pub wall_time_s: f64,
}

impl Row {
    pub fn new(setting: impl Into<String>, metric: impl Into<String>, values: &[f64], wall_time_s: f64) -> Self {
        let (mean, std) = mean_std(values);
        Row { setting: setting.into(), metric: metric.into(), mean, std, n: values.len(), wall_time_s }
    }
}

/// Mean and population standard deviation (NaN for an empty slice).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    /// Experiment kind: heatmap, capacity, detect or repair.
    pub experiment: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub rows: Vec<Row>,
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    Sha256::digest(config.canonical_json().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

impl ResultTable {
    pub fn new(experiment: &str, config: &ExperimentConfig) -> Self {
        ResultTable { experiment: experiment.into(), config_hash: config_hash(config), config: config.clone(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Row) {
        self.rows.push(row);
    }

    pub fn find(&self, setting: &str, metric: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.setting == setting && r.metric == metric)
    }

    pub fn rows_for_metric<'a>(&'a self, metric: &'a str) -> impl Iterator<Item = &'a Row> + 'a {
        self.rows.iter().filter(move |r| r.metric == metric)
    }

    /// Rows ordered by metric then mean, ties kept in insertion order.
    pub fn sorted(&self) -> Vec<&Row> {
        let mut rows: Vec<&Row> = self.rows.iter().collect();
        rows.sort_by(|a, b| a.metric.cmp(&b.metric).then(a.mean.total_cmp(&b.mean)));
        rows
    }

    pub fn to_csv(&self) -> HarnessResult<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["experiment", "config_hash", "setting", "metric", "mean", "std", "n", "wall_time_s"])?;
        for r in &self.rows {
            w.write_record([
                self.experiment.clone(),
                self.config_hash.clone(),
                r.setting.clone(),
                r.metric.clone(),
                format!("{:e}", r.mean),
                format!("{:e}", r.std),
                r.n.to_string(),
                format!("{:.3}", r.wall_time_s),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn to_json(&self) -> HarnessResult<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> HarnessResult<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let json_path = dir.join(format!("{stem}.json"));
        std::fs::write(&csv_path, self.to_csv()?).map_err(io_err(&csv_path))?;
        std::fs::write(&json_path, self.to_json()?).map_err(io_err(&json_path))?;
        Ok((csv_path, json_path))
    }

    pub fn read_json(path: &Path) -> HarnessResult<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn from_json(text: &str) -> HarnessResult<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Largest absolute difference in `mean` between matching rows, or `None` if the row sets differ.
    pub fn max_mean_difference(&self, other: &ResultTable) -> Option<f64> {
        if self.rows.len() != other.rows.len() {
            return None;
        }
        let mut worst = 0.0_f64;
        for (a, b) in self.rows.iter().zip(&other.rows) {
            if a.setting != b.setting || a.metric != b.metric {
                return None;
            }
            if a.mean.is_nan() && b.mean.is_nan() {
                continue;
            }
            worst = worst.max((a.mean - b.mean).abs());
        }
        Some(worst)
    }
}
