use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExperimentSummary, SweepRow};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Usage(format!("unknown report format `{other}` (csv, json)"))),
        }
    }
}

pub const REPORT_COLUMNS: [&str; 6] = [
    "episode",
    "collided",
    "min_proximity_m",
    "success",
    "policy_queries",
    "wall_time_s",
];

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct Row {
    episode: usize,
    collided: bool,
    min_proximity_m: f64,
    success: bool,
    policy_queries: usize,
    wall_time_s: f64,
}

#[derive(Serialize)]
struct TraceRow {
    episode: usize,
    min_proximity_m: f64,
    buffer_m: f64,
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-episode table (CSV) or the whole summary (JSON).
pub fn emit_report(summary: &ExperimentSummary, path: &Path, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Json => {
            let mut text = serde_json::to_string_pretty(summary)?;
            text.push('\n');
            std::fs::write(path, text).map_err(|e| Error::io(path, e))
        }
        ReportFormat::Csv => {
            let mut w = writer(path)?;
            for r in &summary.records {
                w.serialize(Row {
                    episode: r.episode,
                    collided: r.collided,
                    min_proximity_m: r.min_proximity,
                    success: r.success,
                    policy_queries: r.policy_queries,
                    wall_time_s: r.wall_time,
                })?;
            }
            finish(w, path)
        }
    }
}

/// Closest approach per episode next to the buffer, for plotting.
pub fn emit_proximity_trace(summary: &ExperimentSummary, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    for r in &summary.records {
        w.serialize(TraceRow {
            episode: r.episode,
            min_proximity_m: r.min_proximity,
            buffer_m: summary.buffer_m,
        })?;
    }
    finish(w, path)
}

pub fn emit_sweep(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "n",
        "collision_rate",
        "success_rate",
        "mean_episode_time_s",
        "min_proximity_m",
        "buffer_violations",
        "risk",
    ])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.collision_rate.to_string(),
            r.success_rate.to_string(),
            r.mean_episode_time.to_string(),
            r.min_proximity.to_string(),
            r.buffer_violations.to_string(),
            r.risk.to_string(),
        ])?;
    }
    finish(w, path)
}

/// Reads an episode CSV back as `(episode, collided, min_proximity_m,
/// success, policy_queries, wall_time_s)` tuples.
#[allow(clippy::type_complexity)]
pub fn read_csv_report(path: &Path) -> Result<Vec<(usize, bool, f64, bool, usize, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<Row>()
        .map(|row| {
            let row = row?;
            Ok((
                row.episode,
                row.collided,
                row.min_proximity_m,
                row.success,
                row.policy_queries,
                row.wall_time_s,
            ))
        })
        .collect()
}
