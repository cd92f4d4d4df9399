//! CSV stream records and their split into legal per-user streams.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{CellTrajectory, TrajectorySet};
use crate::grid::{BoundingBox, Cell, GridSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub user_id: String,
    pub timestamp: u32,
    pub x: f64,
    pub y: f64,
}

/// One contiguous, adjacency-respecting stream of a user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RealStream {
    /// Dense index into [`StreamSet::users`].
    pub person: u32,
    pub start: u32,
    pub cells: Vec<Cell>,
}

impl RealStream {
    pub fn end(&self) -> u32 {
        self.start + self.cells.len() as u32 - 1
    }

    pub fn cell_at(&self, t: u32) -> Option<Cell> {
        t.checked_sub(self.start)
            .and_then(|o| self.cells.get(o as usize).copied())
    }
}

/// Discretized streams ordered by `(start, person)`.
#[derive(Debug, Clone)]
pub struct StreamSet {
    pub grid: GridSpec,
    pub first_tick: u32,
    pub last_tick: u32,
    pub users: Vec<String>,
    pub streams: Vec<RealStream>,
}

impl StreamSet {
    pub fn num_ticks(&self) -> u32 {
        self.last_tick - self.first_tick + 1
    }

    pub fn average_length(&self) -> f64 {
        let total: usize = self.streams.iter().map(|s| s.cells.len()).sum();
        total as f64 / self.streams.len().max(1) as f64
    }

    /// Number of streams holding a location at each tick.
    pub fn active_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_ticks() as usize];
        for s in &self.streams {
            for t in s.start..=s.end() {
                counts[(t - self.first_tick) as usize] += 1;
            }
        }
        counts
    }

    pub fn to_trajectories(&self) -> TrajectorySet {
        TrajectorySet {
            grid: self.grid,
            first_tick: self.first_tick,
            last_tick: self.last_tick,
            trajectories: self
                .streams
                .iter()
                .map(|s| CellTrajectory {
                    start: s.start,
                    cells: s.cells.clone(),
                })
                .collect(),
        }
    }
}

/// A record with its 1-based source line (header is line 1).
#[derive(Debug, Clone)]
pub struct SourcedRecord {
    pub line: u64,
    pub record: StreamRecord,
}

pub fn read_records_from<R: Read>(reader: R, path: &Path) -> Result<Vec<SourcedRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["user_id", "timestamp", "x", "y"] {
        return Err(parse_err(
            1,
            format!(
                "expected header user_id,timestamp,x,y, found {}",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let record: StreamRecord = row
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(line, e.to_string()))?;
        if !(record.x.is_finite() && record.y.is_finite()) {
            return Err(parse_err(line, "coordinates must be finite".into()));
        }
        out.push(SourcedRecord { line, record });
    }
    if out.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<SourcedRecord>> {
    let file = std::fs::File::open(path)?;
    read_records_from(std::io::BufReader::new(file), path)
}

/// Writes records with a header, sorted by `(timestamp, user_id)`.
pub fn write_records<W: Write>(writer: W, records: &[StreamRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn sort_records(records: &mut [StreamRecord]) {
    records.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.user_id.cmp(&b.user_id))
    });
}

/// Groups records by user and splits each user's sequence into streams at
/// timestamp gaps and at jumps between non-adjacent cells. A jump ends the
/// current stream (it quits at the jump tick) and starts a new one there.
pub fn build_streams(
    records: &[SourcedRecord],
    grid: GridSpec,
    source: &Path,
) -> Result<StreamSet> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut by_user: BTreeMap<&str, Vec<&SourcedRecord>> = BTreeMap::new();
    for r in records {
        by_user
            .entry(r.record.user_id.as_str())
            .or_default()
            .push(r);
    }
    let mut users = Vec::with_capacity(by_user.len());
    let mut streams = Vec::new();
    for (person, (name, mut recs)) in by_user.into_iter().enumerate() {
        users.push(name.to_string());
        recs.sort_by_key(|r| r.record.timestamp);
        for pair in recs.windows(2) {
            if pair[0].record.timestamp == pair[1].record.timestamp {
                return Err(Error::Parse {
                    path: PathBuf::from(source),
                    line: pair[1].line.max(pair[0].line),
                    message: format!(
                        "user `{name}` has two records at tick {}",
                        pair[1].record.timestamp
                    ),
                });
            }
        }
        let mut current: Option<RealStream> = None;
        for r in recs {
            let t = r.record.timestamp;
            let cell = grid.discretize(r.record.x, r.record.y);
            let continues = current
                .as_ref()
                .is_some_and(|s| s.end() + 1 == t && s.cells.last().unwrap().is_adjacent(cell));
            if continues {
                current.as_mut().unwrap().cells.push(cell);
            } else {
                streams.extend(current.take());
                current = Some(RealStream {
                    person: person as u32,
                    start: t,
                    cells: vec![cell],
                });
            }
        }
        streams.extend(current);
    }
    streams.sort_by_key(|s| (s.start, s.person));
    let first_tick = streams.iter().map(|s| s.start).min().unwrap();
    let last_tick = streams.iter().map(|s| s.end()).max().unwrap();
    Ok(StreamSet {
        grid,
        first_tick,
        last_tick,
        users,
        streams,
    })
}

/// Grid over `bbox`, or over the box covering every record.
pub fn grid_for(
    records: &[SourcedRecord],
    k: usize,
    bbox: Option<BoundingBox>,
) -> Result<GridSpec> {
    let bbox = match bbox {
        Some(b) => b,
        None => BoundingBox::covering(records.iter().map(|r| (r.record.x, r.record.y)))?,
    };
    GridSpec::new(bbox, k)
}

pub fn ingest(path: &Path, k: usize, bbox: Option<BoundingBox>) -> Result<StreamSet> {
    let records = read_records(path)?;
    let grid = grid_for(&records, k, bbox)?;
    build_streams(&records, grid, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::new(BoundingBox::new(0.0, 0.0, 6.0, 6.0).unwrap(), 6).unwrap()
    }

    fn parse(text: &str) -> Result<Vec<SourcedRecord>> {
        read_records_from(text.as_bytes(), Path::new("mem.csv"))
    }

    fn streams(text: &str) -> StreamSet {
        build_streams(&parse(text).unwrap(), grid(), Path::new("mem.csv")).unwrap()
    }

    #[test]
    fn contiguous_user_is_one_stream() {
        let s = streams("user_id,timestamp,x,y\na,1,0.5,0.5\na,2,1.5,0.5\na,3,1.5,1.5\n");
        assert_eq!(s.streams.len(), 1);
        assert_eq!(s.streams[0].start, 1);
        assert_eq!(s.streams[0].cells.len(), 3);
        assert_eq!((s.first_tick, s.last_tick), (1, 3));
    }

    #[test]
    fn gap_splits() {
        let s =
            streams("user_id,timestamp,x,y\na,1,0.5,0.5\na,2,0.5,0.5\na,5,0.5,0.5\na,6,0.5,0.5\n");
        let spans: Vec<(u32, u32)> = s.streams.iter().map(|s| (s.start, s.end())).collect();
        assert_eq!(spans, vec![(1, 2), (5, 6)]);
        assert!(s.streams.iter().all(|x| x.person == 0));
    }

    #[test]
    fn jump_splits() {
        let s =
            streams("user_id,timestamp,x,y\na,1,0.5,0.5\na,2,0.5,0.5\na,3,3.5,0.5\na,4,3.5,1.5\n");
        let spans: Vec<(u32, u32)> = s.streams.iter().map(|s| (s.start, s.end())).collect();
        assert_eq!(spans, vec![(1, 2), (3, 4)]);
        for st in &s.streams {
            assert!(st.cells.windows(2).all(|w| w[0].is_adjacent(w[1])));
        }
    }

    #[test]
    fn unsorted_input_and_multiple_users() {
        let s = streams("user_id,timestamp,x,y\nb,2,0.5,0.5\na,1,0.5,0.5\nb,1,0.5,0.5\n");
        assert_eq!(s.users, vec!["a", "b"]);
        assert_eq!(s.streams.len(), 2);
        assert_eq!(s.active_counts(), vec![2, 1]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = parse("user_id,timestamp,x,y\na,1,0.5,0.5\na,x,0.5,0.5\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = parse("id,t,x,y\na,1,0,0\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        let e = parse("user_id,timestamp,x,y\na,1,NaN,0\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        assert!(matches!(
            parse("user_id,timestamp,x,y\n"),
            Err(Error::EmptyInput)
        ));
        let recs = parse("user_id,timestamp,x,y\na,1,0,0\na,1,1,1\n").unwrap();
        assert!(matches!(
            build_streams(&recs, grid(), Path::new("m")),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn write_then_read_round_trip() {
        let mut recs = vec![
            StreamRecord {
                user_id: "b".into(),
                timestamp: 1,
                x: 1.25,
                y: 2.5,
            },
            StreamRecord {
                user_id: "a".into(),
                timestamp: 1,
                x: 0.5,
                y: 0.5,
            },
        ];
        sort_records(&mut recs);
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("user_id,timestamp,x,y\na,1,"));
        let back: Vec<StreamRecord> = parse(&text)
            .unwrap()
            .into_iter()
            .map(|r| r.record)
            .collect();
        assert_eq!(back, recs);
    }
}
