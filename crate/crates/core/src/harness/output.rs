//! Run artifacts. Everything except `timings.csv` is a deterministic
//! function of the run configuration.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::ingest::{sort_records, write_records, StreamRecord};
use super::RunOutcome;
use crate::error::Result;
use crate::eval::TrajectorySet;

pub const METRICS_FILE: &str = "metrics.json";
pub const ALLOCATION_FILE: &str = "allocation.jsonl";
pub const PER_TICK_FILE: &str = "per_tick.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const SYNTHETIC_FILE: &str = "synthetic.csv";

/// Records at cell centroids with ids `s<n>`.
pub fn synthetic_records(set: &TrajectorySet) -> Vec<StreamRecord> {
    let mut out: Vec<StreamRecord> = set
        .trajectories
        .iter()
        .enumerate()
        .flat_map(|(id, tr)| {
            tr.cells.iter().enumerate().map(move |(i, &c)| {
                let (x, y) = set.grid.centroid(c);
                StreamRecord {
                    user_id: format!("s{id}"),
                    timestamp: tr.start + i as u32,
                    x,
                    y,
                }
            })
        })
        .collect();
    sort_records(&mut out);
    out
}

pub fn write_metrics(path: &Path, outcome: &RunOutcome) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&outcome.report)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes every artifact into `dir`, creating it if needed, and returns the
/// written paths.
pub fn write_all(dir: &Path, outcome: &RunOutcome) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let paths: Vec<PathBuf> = [
        METRICS_FILE,
        ALLOCATION_FILE,
        PER_TICK_FILE,
        TIMINGS_FILE,
        SYNTHETIC_FILE,
    ]
    .iter()
    .map(|f| dir.join(f))
    .collect();

    write_metrics(&paths[0], outcome)?;

    let mut log = BufWriter::new(File::create(&paths[1])?);
    for rec in &outcome.allocation {
        serde_json::to_writer(&mut log, rec)?;
        log.write_all(b"\n")?;
    }
    log.flush()?;

    let mut per_tick = csv::Writer::from_path(&paths[2])?;
    per_tick.write_record([
        "tick",
        "density_error",
        "transition_error",
        "real_active",
        "synthetic_active",
        "reporters",
        "eps_t",
    ])?;
    for ((t, density, transition), stats) in
        outcome.per_tick_errors()?.into_iter().zip(&outcome.ticks)
    {
        per_tick.write_record([
            t.to_string(),
            density.to_string(),
            transition.to_string(),
            stats.real_active.to_string(),
            stats.synthetic_active.to_string(),
            stats.reporters.to_string(),
            stats.eps_t.to_string(),
        ])?;
    }
    per_tick.flush()?;

    let mut timings = csv::Writer::from_path(&paths[3])?;
    timings.write_record(["tick", "seconds"])?;
    for (stats, secs) in outcome.ticks.iter().zip(&outcome.timings) {
        timings.write_record([stats.tick.to_string(), format!("{secs:.6}")])?;
    }
    timings.flush()?;

    let file = BufWriter::new(File::create(&paths[4])?);
    write_records(file, &synthetic_records(&outcome.synthetic))?;
    Ok(paths)
}
