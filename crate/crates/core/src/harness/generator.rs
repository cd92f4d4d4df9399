//! Built-in synthetic stream generator: walkers enter at preferred cells,
//! head for hotspots with a biased random walk, and quit with a base
//! probability plus an extra probability at their destination.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ingest::{sort_records, StreamRecord};
use crate::error::{Error, Result};
use crate::grid::{BoundingBox, Cell, GridSpec, MAX_GRID_SIDE};
use crate::synth::sample_weighted;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub tick: u32,
    pub hotspots: Vec<[u16; 2]>,
    /// Keeps the current entry cells when empty.
    #[serde(default)]
    pub entry_cells: Vec<[u16; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub k: usize,
    pub ticks: u32,
    pub initial_users: usize,
    pub arrivals_per_tick: usize,
    pub quit_prob: f64,
    /// Extra quit probability per tick spent at the walker's destination.
    pub destination_quit_prob: f64,
    pub stay_prob: f64,
    /// Strength of the pull toward the destination hotspot.
    pub attraction: f64,
    pub hotspots: Vec<[u16; 2]>,
    pub entry_cells: Vec<[u16; 2]>,
    /// Share of walkers entering at an entry cell rather than anywhere.
    pub entry_bias: f64,
    pub drift: Option<DriftSpec>,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            k: 6,
            ticks: 100,
            initial_users: 1000,
            arrivals_per_tick: 50,
            quit_prob: 0.02,
            destination_quit_prob: 0.3,
            stay_prob: 0.2,
            attraction: 1.5,
            hotspots: vec![[1, 1], [4, 4], [1, 4]],
            entry_cells: vec![[0, 5], [5, 0]],
            entry_bias: 0.8,
            drift: None,
        }
    }
}

impl GeneratorSpec {
    /// Unit cells: the box is `[0, k] × [0, k]`.
    pub fn grid(&self) -> Result<GridSpec> {
        let side = self.k as f64;
        GridSpec::new(BoundingBox::new(0.0, 0.0, side, side)?, self.k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > MAX_GRID_SIDE {
            return Err(Error::invalid(
                "generator.k",
                format!("must be in 1..={MAX_GRID_SIDE}"),
            ));
        }
        if self.ticks == 0 {
            return Err(Error::invalid("generator.ticks", "must be >= 1"));
        }
        for (name, p) in [
            ("generator.quit_prob", self.quit_prob),
            (
                "generator.destination_quit_prob",
                self.destination_quit_prob,
            ),
            ("generator.stay_prob", self.stay_prob),
            ("generator.entry_bias", self.entry_bias),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(
                    name,
                    format!("probability out of [0, 1]: {p}"),
                ));
            }
        }
        if !(self.attraction.is_finite() && self.attraction >= 0.0) {
            return Err(Error::invalid(
                "generator.attraction",
                "must be finite and >= 0",
            ));
        }
        let in_grid = |cells: &[[u16; 2]]| {
            cells
                .iter()
                .all(|c| (c[0] as usize) < self.k && (c[1] as usize) < self.k)
        };
        if self.hotspots.is_empty() || !in_grid(&self.hotspots) || !in_grid(&self.entry_cells) {
            return Err(Error::invalid(
                "generator.hotspots",
                "need at least one hotspot; all cells inside the grid",
            ));
        }
        if let Some(d) = &self.drift {
            if d.hotspots.is_empty() || !in_grid(&d.hotspots) || !in_grid(&d.entry_cells) {
                return Err(Error::invalid(
                    "generator.drift",
                    "need at least one hotspot; all cells inside the grid",
                ));
            }
        }
        Ok(())
    }
}

struct Walker {
    id: usize,
    cell: Cell,
    target: Cell,
}

struct Layout {
    hotspots: Vec<Cell>,
    entries: Vec<Cell>,
}

fn cells(v: &[[u16; 2]]) -> Vec<Cell> {
    v.iter().map(|c| Cell::new(c[0], c[1])).collect()
}

fn distance(a: Cell, b: Cell) -> f64 {
    let dx = a.ix as f64 - b.ix as f64;
    let dy = a.iy as f64 - b.iy as f64;
    (dx * dx + dy * dy).sqrt()
}

struct Generator<'a> {
    spec: &'a GeneratorSpec,
    grid: GridSpec,
    layout: Layout,
    rng: ChaCha8Rng,
    next_id: usize,
}

impl Generator<'_> {
    fn pick(&mut self, from: &[Cell]) -> Cell {
        from[self.rng.gen_range(0..from.len())]
    }

    fn spawn(&mut self) -> Walker {
        let cell =
            if !self.layout.entries.is_empty() && self.rng.gen::<f64>() < self.spec.entry_bias {
                let entries = std::mem::take(&mut self.layout.entries);
                let c = self.pick(&entries);
                self.layout.entries = entries;
                c
            } else {
                self.grid
                    .cell_at(self.rng.gen_range(0..self.grid.num_cells()))
            };
        let hotspots = std::mem::take(&mut self.layout.hotspots);
        let target = self.pick(&hotspots);
        self.layout.hotspots = hotspots;
        self.next_id += 1;
        Walker {
            id: self.next_id - 1,
            cell,
            target,
        }
    }

    /// Advances a walker by one tick; `false` when it quits.
    fn advance(&mut self, w: &mut Walker) -> bool {
        let mut quit = self.spec.quit_prob;
        if w.cell == w.target {
            quit += self.spec.destination_quit_prob;
        }
        if self.rng.gen::<f64>() < quit {
            return false;
        }
        if w.cell == w.target {
            let hotspots = std::mem::take(&mut self.layout.hotspots);
            w.target = self.pick(&hotspots);
            self.layout.hotspots = hotspots;
        }
        if self.rng.gen::<f64>() >= self.spec.stay_prob {
            let options = self.grid.neighbors(w.cell);
            let weights: Vec<f64> = options
                .iter()
                .map(|&n| (-self.spec.attraction * distance(n, w.target)).exp())
                .collect();
            w.cell = options[sample_weighted(&weights, &mut self.rng)];
        }
        true
    }

    fn jitter(&mut self, c: Cell) -> (f64, f64) {
        let (cw, ch) = (self.grid.cell_width(), self.grid.cell_height());
        let x = self.grid.bbox.min_x + (c.ix as f64 + 0.05 + 0.9 * self.rng.gen::<f64>()) * cw;
        let y = self.grid.bbox.min_y + (c.iy as f64 + 0.05 + 0.9 * self.rng.gen::<f64>()) * ch;
        (x, y)
    }
}

/// Records for ticks `0..ticks`, sorted by `(timestamp, user_id)`.
/// Deterministic in `(spec, seed)`.
pub fn generate(spec: &GeneratorSpec, seed: u64) -> Result<Vec<StreamRecord>> {
    spec.validate()?;
    let mut g = Generator {
        spec,
        grid: spec.grid()?,
        layout: Layout {
            hotspots: cells(&spec.hotspots),
            entries: cells(&spec.entry_cells),
        },
        rng: ChaCha8Rng::seed_from_u64(seed),
        next_id: 0,
    };
    let mut walkers: Vec<Walker> = (0..spec.initial_users).map(|_| g.spawn()).collect();
    let mut records = Vec::new();
    for t in 0..spec.ticks {
        if t > 0 {
            if let Some(d) = spec.drift.as_ref().filter(|d| d.tick == t) {
                g.layout.hotspots = cells(&d.hotspots);
                if !d.entry_cells.is_empty() {
                    g.layout.entries = cells(&d.entry_cells);
                }
                for w in walkers.iter_mut() {
                    let i = g.rng.gen_range(0..g.layout.hotspots.len());
                    w.target = g.layout.hotspots[i];
                }
            }
            let mut kept = Vec::with_capacity(walkers.len());
            for mut w in walkers {
                if g.advance(&mut w) {
                    kept.push(w);
                }
            }
            walkers = kept;
            for _ in 0..spec.arrivals_per_tick {
                let w = g.spawn();
                walkers.push(w);
            }
        }
        for walker in &walkers {
            let (x, y) = g.jitter(walker.cell);
            records.push(StreamRecord {
                user_id: format!("u{}", walker.id),
                timestamp: t,
                x,
                y,
            });
        }
    }
    sort_records(&mut records);
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorSpec {
        GeneratorSpec {
            ticks: 30,
            initial_users: 200,
            arrivals_per_tick: 10,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small(), 3).unwrap();
        assert_eq!(a, generate(&small(), 3).unwrap());
        assert_ne!(a, generate(&small(), 4).unwrap());
    }

    #[test]
    fn constant_population_without_quits_or_arrivals() {
        let spec = GeneratorSpec {
            quit_prob: 0.0,
            destination_quit_prob: 0.0,
            arrivals_per_tick: 0,
            ..small()
        };
        let recs = generate(&spec, 1).unwrap();
        for t in 0..spec.ticks {
            assert_eq!(recs.iter().filter(|r| r.timestamp == t).count(), 200);
        }
    }

    #[test]
    fn points_stay_inside_their_box_and_move_adjacently() {
        let spec = small();
        let grid = spec.grid().unwrap();
        let recs = generate(&spec, 9).unwrap();
        let mut last: std::collections::HashMap<&str, (u32, Cell)> = Default::default();
        for r in &recs {
            assert!(r.x > 0.0 && r.x < 6.0 && r.y > 0.0 && r.y < 6.0);
            let c = grid.discretize(r.x, r.y);
            if let Some((t, prev)) = last.get(r.user_id.as_str()) {
                assert_eq!(*t + 1, r.timestamp);
                assert!(prev.is_adjacent(c));
            }
            last.insert(&r.user_id, (r.timestamp, c));
        }
    }

    #[test]
    fn rejects_invalid_specs() {
        for spec in [
            GeneratorSpec {
                quit_prob: 1.5,
                ..small()
            },
            GeneratorSpec {
                hotspots: vec![],
                ..small()
            },
            GeneratorSpec {
                hotspots: vec![[9, 0]],
                ..small()
            },
            GeneratorSpec {
                ticks: 0,
                ..small()
            },
        ] {
            assert!(generate(&spec, 0).is_err());
        }
    }
}
