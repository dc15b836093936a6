//! `report.csv`: one row per `(method, N, seed)` cell, appended as cells
//! finish so that completed work survives a crash.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const REPORT_FILE: &str = "report.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Error,
}

/// Rewards and suboptimalities are in raw outcome units; the `_std`
/// columns repeat them in standardized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub estimator: String,
    pub dataset: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub rho: f64,
    pub iv_strength: f64,
    pub seed: u64,
    pub status: RowStatus,
    pub mse_h: Option<f64>,
    pub reward_in_dist: Option<f64>,
    pub reward_ood: Option<f64>,
    pub subopt: Option<f64>,
    pub subopt_ood: Option<f64>,
    pub subopt_random: Option<f64>,
    pub reward_in_dist_std: Option<f64>,
    pub reward_ood_std: Option<f64>,
    pub subopt_std: Option<f64>,
    pub final_loss: Option<f64>,
    pub epochs: Option<usize>,
    pub wall_clock_s: f64,
    pub config_digest: String,
    pub version: String,
    pub error: String,
}

pub type CellKey = (String, usize, u64);

impl ReportRow {
    pub fn key(&self) -> CellKey {
        (self.method.clone(), self.n, self.seed)
    }

    pub fn is_ok(&self) -> bool {
        self.status == RowStatus::Ok
    }

    /// Value of a named metric column, if the column exists and is filled.
    pub fn metric(&self, name: &str) -> Option<Option<f64>> {
        let v = match name {
            "mse_h" => self.mse_h,
            "reward_in_dist" => self.reward_in_dist,
            "reward_ood" => self.reward_ood,
            "subopt" => self.subopt,
            "subopt_ood" => self.subopt_ood,
            "subopt_random" => self.subopt_random,
            "reward_in_dist_std" => self.reward_in_dist_std,
            "reward_ood_std" => self.reward_ood_std,
            "subopt_std" => self.subopt_std,
            "final_loss" => self.final_loss,
            "wall_clock_s" => Some(self.wall_clock_s),
            _ => return None,
        };
        Some(v)
    }

    /// Value of a named grouping column, rendered as text.
    pub fn group_value(&self, key: &str) -> Option<String> {
        let v = match key {
            "method" => self.method.clone(),
            "estimator" => self.estimator.clone(),
            "dataset" => self.dataset.clone(),
            "N" => self.n.to_string(),
            "rho" => self.rho.to_string(),
            "iv_strength" => self.iv_strength.to_string(),
            "seed" => self.seed.to_string(),
            "status" => format!("{:?}", self.status).to_lowercase(),
            _ => return None,
        };
        Some(v)
    }
}

pub const METRICS: [&str; 11] = [
    "mse_h",
    "reward_in_dist",
    "reward_ood",
    "subopt",
    "subopt_ood",
    "subopt_random",
    "reward_in_dist_std",
    "reward_ood_std",
    "subopt_std",
    "final_loss",
    "wall_clock_s",
];

pub const GROUP_KEYS: [&str; 8] = ["method", "estimator", "dataset", "N", "rho", "iv_strength", "seed", "status"];

pub fn read_rows<R: std::io::Read>(input: R) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    read_rows(File::open(path)?)
}

pub fn write_rows<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Append-only writer bound to one config digest.
pub struct ReportWriter {
    path: PathBuf,
    digest: String,
    done: BTreeSet<CellKey>,
    rows: Vec<ReportRow>,
}

impl ReportWriter {
    /// Open `path`, keeping rows already there. A torn trailing line from an
    /// interrupted write is dropped. Rows from another digest are an error.
    pub fn open(path: &Path, digest: &str) -> Result<Self> {
        let mut rows = Vec::new();
        if path.exists() {
            let text = std::fs::read_to_string(path)?;
            let keep = match text.rfind('\n') {
                Some(end) if end + 1 != text.len() => &text[..=end],
                Some(_) => &text[..],
                None => "",
            };
            if keep.len() != text.len() {
                std::fs::write(path, keep)?;
            }
            rows = read_rows(keep.as_bytes())?;
            if let Some(r) = rows.iter().find(|r| r.config_digest != digest) {
                return Err(HarnessError::DigestMismatch {
                    path: path.to_path_buf(),
                    expected: digest.to_string(),
                    found: r.config_digest.clone(),
                });
            }
        }
        let done = rows.iter().map(ReportRow::key).collect();
        Ok(Self { path: path.to_path_buf(), digest: digest.to_string(), done, rows })
    }

    pub fn is_done(&self, key: &CellKey) -> bool {
        self.done.contains(key)
    }

    pub fn rows(&self) -> &[ReportRow] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<ReportRow> {
        self.rows
    }

    /// Append one row and flush it to disk.
    pub fn append(&mut self, row: ReportRow) -> Result<()> {
        if row.config_digest != self.digest {
            return Err(HarnessError::DigestMismatch {
                path: self.path.clone(),
                expected: self.digest.clone(),
                found: row.config_digest,
            });
        }
        let fresh = !self.path.exists() || std::fs::metadata(&self.path)?.len() == 0;
        let file = OpenOptions::new().create(true).append(true).open(&self.path)?;
        let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        w.serialize(&row)?;
        w.flush()?;
        w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?.sync_data()?;
        self.done.insert(row.key());
        self.rows.push(row);
        Ok(())
    }
}

#[cfg(test)]
pub(crate) fn sample_row(method: &str, n: usize, seed: u64, mse: f64) -> ReportRow {
    ReportRow {
        method: method.into(),
        estimator: "feedforward".into(),
        dataset: "demand".into(),
        n,
        rho: 0.9,
        iv_strength: 1.0,
        seed,
        status: RowStatus::Ok,
        mse_h: Some(mse),
        reward_in_dist: Some(100.0 + mse),
        reward_ood: Some(90.0),
        subopt: Some(0.1 * mse),
        subopt_ood: None,
        subopt_random: Some(3.0),
        reward_in_dist_std: Some(0.5),
        reward_ood_std: Some(0.25),
        subopt_std: Some(0.01),
        final_loss: Some(0.02),
        epochs: Some(7),
        wall_clock_s: 1.5,
        config_digest: "abc".into(),
        version: "0.1.0".into(),
        error: String::new(),
    }
}
