use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::MetricsReport;
use crate::error::{Error, Result};
use crate::training::{epoch_csv, EpochLog};

/// Epochs averaged into one smoothed curve point.
pub const SMOOTHING_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldoutSummary {
    pub mean: MetricsReport,
    pub std: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub folds: Vec<MetricsReport>,
    pub mean: MetricsReport,
    /// `null` when the manifest has no usable held-out pets.
    pub heldout: Option<HeldoutSummary>,
}

/// Consecutive windows of `window` epochs averaged field by field. The last
/// window may be partial; each row carries the last epoch of its window.
pub fn smooth_logs(logs: &[EpochLog], window: usize) -> Result<Vec<EpochLog>> {
    if logs.is_empty() {
        return Err(Error::invalid("cannot smooth an empty epoch log"));
    }
    if window == 0 {
        return Err(Error::invalid("smoothing window must be at least 1"));
    }
    Ok(logs.chunks(window).map(average).collect())
}

fn average(rows: &[EpochLog]) -> EpochLog {
    let n = rows.len() as f64;
    let sum = |f: fn(&EpochLog) -> f64| rows.iter().map(f).sum::<f64>() / n;
    EpochLog {
        epoch: rows[rows.len() - 1].epoch,
        train_loss: sum(|r| r.train_loss),
        train_acc: sum(|r| r.train_acc),
        val_acc: sum(|r| r.val_acc),
        type1: sum(|r| r.type1),
        type2: sum(|r| r.type2),
        train_same_rate: sum(|r| r.train_same_rate),
    }
}

pub fn write_report(report: &CrossValReport, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `metrics.json`, raw and smoothed curves per fold, and the
/// fold-averaged curves. Returns the paths written.
pub fn emit_report(report: &CrossValReport, logs: &[Vec<EpochLog>], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if logs.is_empty() || logs.iter().any(Vec::is_empty) {
        return Err(Error::invalid("report needs a non-empty epoch log per fold"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let path = out_dir.join("metrics.json");
    write_report(report, &path)?;
    written.push(path);

    let mut put = |name: String, rows: &[EpochLog]| -> Result<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, epoch_csv(rows)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    for (i, fold) in logs.iter().enumerate() {
        put(format!("curves_fold{i}.csv"), fold)?;
        put(format!("curves_fold{i}_smoothed.csv"), &smooth_logs(fold, SMOOTHING_WINDOW)?)?;
    }
    let epochs = logs.iter().map(Vec::len).min().unwrap_or(0);
    let mean: Vec<EpochLog> = (0..epochs)
        .map(|e| {
            let rows: Vec<EpochLog> = logs.iter().map(|l| l[e].clone()).collect();
            average(&rows)
        })
        .collect();
    put("curves_mean.csv".to_owned(), &mean)?;
    put("curves_mean_smoothed.csv".to_owned(), &smooth_logs(&mean, SMOOTHING_WINDOW)?)?;
    Ok(written)
}
