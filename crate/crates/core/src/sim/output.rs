use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::{run_with, RunArtifact, SimConfig, SimError};
use crate::metrics::{summarize_f1, RoundMetrics};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub config: SimConfig,
    pub rounds: usize,
    pub final_f1: Vec<f64>,
    pub final_f1_mean: Option<f64>,
    pub final_f1_std: Option<f64>,
    pub mean_f_in_out: f64,
    pub min_hssr: f64,
    pub max_byz_in_view: usize,
    /// Rounds in which at least one honest view exceeded `⌈b_t⌉`.
    pub rounds_over_threshold: usize,
    pub messages_sent: u64,
    pub wall_clock_secs: f64,
}

impl RunArtifact {
    pub fn summary(&self) -> RunSummary {
        let rows = &self.rows;
        let (mean, std) = if self.final_f1.is_empty() {
            (None, None)
        } else {
            let (m, s) = summarize_f1(&self.final_f1);
            (Some(m), Some(s))
        };
        RunSummary {
            config: self.config.clone(),
            rounds: rows.len(),
            final_f1: self.final_f1.clone(),
            final_f1_mean: mean,
            final_f1_std: std,
            mean_f_in_out: rows.iter().map(|r| r.f_in_out).sum::<f64>() / rows.len().max(1) as f64,
            min_hssr: rows.iter().map(|r| r.hssr).fold(f64::INFINITY, f64::min),
            max_byz_in_view: rows.iter().map(|r| r.max_byz_in_view).max().unwrap_or(0),
            rounds_over_threshold: rows.iter().filter(|r| r.views_over_threshold > 0).count(),
            messages_sent: rows.iter().map(|r| r.messages_sent).sum(),
            wall_clock_secs: self.wall_clock_secs,
        }
    }
}

fn io_error(path: &Path, source: std::io::Error) -> SimError {
    SimError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Runs `config`, streaming rows to `dir/metrics.csv` and writing
/// `dir/summary.json` at the end. `dir` must already exist.
pub fn run_to_dir(config: SimConfig, dir: &Path) -> Result<RunArtifact, SimError> {
    match std::fs::metadata(dir) {
        Ok(meta) if meta.is_dir() => {}
        Ok(_) => {
            return Err(io_error(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotADirectory, "not a directory"),
            ))
        }
        Err(e) => return Err(io_error(dir, e)),
    }
    // validate before touching the filesystem
    config.validate()?;

    let csv_path = dir.join(METRICS_FILE);
    let file = File::create(&csv_path).map_err(|e| io_error(&csv_path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    writer.write_record(RoundMetrics::CSV_HEADER)?;
    writer.flush().map_err(|e| io_error(&csv_path, e))?;
    let artifact = run_with(config, |row| {
        writer.write_record(row.csv_record())?;
        writer.flush().map_err(|e| io_error(&csv_path, e))
    })?;
    drop(writer);

    let summary_path = dir.join(SUMMARY_FILE);
    let file = File::create(&summary_path).map_err(|e| io_error(&summary_path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, &artifact.summary())?;
    out.write_all(b"\n").map_err(|e| io_error(&summary_path, e))?;
    out.flush().map_err(|e| io_error(&summary_path, e))?;
    Ok(artifact)
}
