//! End-to-end runs: load or generate streams, drive the tick loop, score the
//! synthetic output and write the artifacts.

pub mod config;
pub mod generator;
pub mod ingest;
pub mod output;
pub mod sim;

use std::path::Path;

use serde_json::json;

pub use config::{GridConfig, InputSource, RunConfig, SynthConfig, Variant};
pub use generator::{generate, DriftSpec, GeneratorSpec};
pub use ingest::{ingest, RealStream, StreamRecord, StreamSet};
pub use sim::{Simulation, TickOutcome, TickStats};

use crate::allocation::AllocationRecord;
use crate::error::Result;
use crate::eval::{evaluate, per_tick_errors, MetricsReport, TrajectorySet};
use crate::grid::GridSpec;

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: MetricsReport,
    pub ticks: Vec<TickStats>,
    pub allocation: Vec<AllocationRecord>,
    /// Wall-clock seconds per tick, aligned with `ticks`.
    pub timings: Vec<f64>,
    pub original: TrajectorySet,
    pub synthetic: TrajectorySet,
}

impl RunOutcome {
    pub fn per_tick_errors(&self) -> Result<Vec<(u32, f64, f64)>> {
        per_tick_errors(&self.original, &self.synthetic)
    }
}

/// Streams from generator records, with line numbers as if read back from
/// their CSV rendering.
pub fn streams_from_records(records: &[StreamRecord], grid: GridSpec) -> Result<StreamSet> {
    let sourced: Vec<ingest::SourcedRecord> = records
        .iter()
        .enumerate()
        .map(|(i, r)| ingest::SourcedRecord {
            line: i as u64 + 2,
            record: r.clone(),
        })
        .collect();
    ingest::build_streams(&sourced, grid, Path::new("<generated>"))
}

pub fn load_streams(cfg: &RunConfig) -> Result<StreamSet> {
    match &cfg.input {
        InputSource::File(path) => ingest(path, cfg.grid.k, cfg.grid.bbox),
        InputSource::Generator(spec) => {
            let records = generate(spec, cfg.seed)?;
            let bbox = match cfg.grid.bbox {
                Some(b) => b,
                None => spec.grid()?.bbox,
            };
            streams_from_records(&records, GridSpec::new(bbox, cfg.grid.k)?)
        }
    }
}

pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let streams = load_streams(cfg)?;
    run_on(cfg, &streams)
}

pub fn run_on(cfg: &RunConfig, streams: &StreamSet) -> Result<RunOutcome> {
    let mut sim = Simulation::new(cfg, streams)?;
    let (mut ticks, mut allocation, mut timings) = (Vec::new(), Vec::new(), Vec::new());
    while let Some(out) = sim.step()? {
        ticks.push(out.stats);
        allocation.push(out.record);
        timings.push(out.seconds);
    }
    let original = streams.to_trajectories();
    let synthetic = sim.synthetic_trajectories();
    let mut report = evaluate(&original, &synthetic, &cfg.eval)?;
    let input = match &cfg.input {
        InputSource::File(p) => json!({ "file": p }),
        InputSource::Generator(_) => json!("generator"),
    };
    report.metadata.extend([
        ("input".to_string(), input),
        ("variant".to_string(), json!(cfg.variant.as_str())),
        ("epsilon".to_string(), json!(cfg.epsilon)),
        ("w".to_string(), json!(cfg.w)),
        ("k".to_string(), json!(streams.grid.k)),
        ("strategy".to_string(), json!(cfg.allocation.strategy)),
        ("division".to_string(), json!(cfg.allocation.division)),
        ("lambda".to_string(), json!(sim.synth_params().lambda)),
        ("seed".to_string(), json!(cfg.seed)),
        ("first_tick".to_string(), json!(streams.first_tick)),
        ("last_tick".to_string(), json!(streams.last_tick)),
        ("users".to_string(), json!(streams.users.len())),
        ("real_streams".to_string(), json!(streams.streams.len())),
        (
            "synthetic_trajectories".to_string(),
            json!(synthetic.trajectories.len()),
        ),
    ]);
    Ok(RunOutcome {
        report,
        ticks,
        allocation,
        timings,
        original,
        synthetic,
    })
}
