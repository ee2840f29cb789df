//! CSV and JSON artifact emission. Floats print with 17 significant
//! digits so equal runs produce byte-identical files, and every file is
//! written atomically (temp + rename) so interrupted runs never leave a
//! corrupt artifact behind.

use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::config::RunConfigFile;
use crate::simulator::{RoundMetrics, SweepRow};

pub const METRICS_HEADER: &str =
    "t,epoch,loss,grad_norm_sq,bits_uplink_total,bits_downlink_total,lr,max_error_norm_sq,wall_ns";

/// 17 significant digits; enough to round-trip any f64 exactly.
pub fn format_g17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn metrics_to_csv(metrics: &[RoundMetrics]) -> String {
    let mut out = String::with_capacity(64 * (metrics.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for m in metrics {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            m.t,
            m.epoch,
            format_g17(m.loss),
            format_g17(m.grad_norm_sq),
            m.bits_uplink_total,
            m.bits_downlink_total,
            format_g17(m.lr),
            format_g17(m.max_error_norm_sq),
            m.wall_ns,
        ));
    }
    out
}

pub const SWEEP_HEADER: &str = "n,lr,iterations_to_target,bits_to_target,reached";

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    out.push_str(SWEEP_HEADER);
    out.push('\n');
    for row in rows {
        let iters = row.iterations_to_target.map(|t| t.to_string()).unwrap_or_default();
        let bits = row.bits_to_target.map(|b| b.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.n,
            format_g17(row.lr),
            iters,
            bits,
            row.reached,
        ));
    }
    out
}

/// Echo of the effective configuration plus the final recorded values.
#[derive(Debug, Serialize)]
pub struct RunSummary<'a> {
    pub config: &'a RunConfigFile,
    pub rounds: u64,
    pub final_loss: f64,
    pub final_grad_norm_sq: f64,
    pub bits_uplink_total: u64,
    pub bits_downlink_total: u64,
    pub max_error_norm_sq: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations_to_target: Option<u64>,
}

impl<'a> RunSummary<'a> {
    pub fn new(config: &'a RunConfigFile, metrics: &[RoundMetrics]) -> Self {
        let last = metrics.last().expect("runs always record at least one row");
        Self {
            config,
            rounds: last.t,
            final_loss: last.loss,
            final_grad_norm_sq: last.grad_norm_sq,
            bits_uplink_total: last.bits_uplink_total,
            bits_downlink_total: last.bits_downlink_total,
            max_error_norm_sq: last.max_error_norm_sq,
            iterations_to_target: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("summary serializes");
        text.push('\n');
        text
    }
}

/// Writes via a sibling temp file and a rename, so readers never observe
/// a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp = path.to_path_buf();
    tmp.set_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
