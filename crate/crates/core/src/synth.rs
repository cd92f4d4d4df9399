//! Synthetic trajectory database driven by the mobility snapshot.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Cell, GridSpec};
use crate::mobility::MobilitySnapshot;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    /// Termination restriction factor, usually the average trajectory length.
    pub lambda: f64,
}

impl SynthParams {
    pub fn new(lambda: f64) -> Result<Self> {
        if lambda.is_finite() && lambda > 0.0 {
            Ok(Self { lambda })
        } else {
            Err(Error::invalid(
                "lambda",
                format!("must be > 0, got {lambda}"),
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticTrajectory {
    pub id: u64,
    /// Tick of `cells[0]`; cell `i` is the location at `start + i`.
    pub start: u32,
    pub cells: Vec<Cell>,
    pub active: bool,
}

impl SyntheticTrajectory {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn last_cell(&self) -> Cell {
        *self
            .cells
            .last()
            .expect("synthetic trajectories are never empty")
    }

    fn final_cell_if_quit_at(&self, t: u32) -> Cell {
        let n = self.len();
        if n > 1 && self.start + n as u32 - 1 == t {
            self.cells[n - 2]
        } else {
            self.last_cell()
        }
    }
}

/// Quit probability reweighted by stream length, clamped to `[0, 1]`.
pub fn quit_probability(len: usize, lambda: f64, base: f64) -> f64 {
    (len as f64 / lambda * base).clamp(0.0, 1.0)
}

/// Index drawn proportionally to `weights`; uniform when they carry no mass.
pub(crate) fn sample_weighted<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return rng.gen_range(0..weights.len());
    }
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    // rounding left u at the very top; take the last positive weight
    weights
        .iter()
        .rposition(|w| *w > 0.0)
        .unwrap_or(weights.len() - 1)
}

#[derive(Debug, Clone, Default)]
pub struct SyntheticDatabase {
    trajectories: Vec<SyntheticTrajectory>,
    // indices into `trajectories` of the active ones, ascending
    active: Vec<usize>,
}

impl SyntheticDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn trajectories(&self) -> &[SyntheticTrajectory] {
        &self.trajectories
    }

    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    pub fn active(&self) -> impl Iterator<Item = &SyntheticTrajectory> {
        self.active.iter().map(|&i| &self.trajectories[i])
    }

    fn spawn(&mut self, start: u32, cell: Cell) {
        let id = self.trajectories.len() as u64;
        self.active.push(self.trajectories.len());
        self.trajectories.push(SyntheticTrajectory {
            id,
            start,
            cells: vec![cell],
            active: true,
        });
    }

    /// Extends every active trajectory by one cell for tick `t`, or
    /// terminates it with the length-reweighted quit probability.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        snapshot: &MobilitySnapshot,
        params: &SynthParams,
        rng: &mut R,
    ) {
        let grid = &snapshot.grid;
        let mut still_active = Vec::with_capacity(self.active.len());
        for &i in &self.active {
            let traj = &mut self.trajectories[i];
            let row = &snapshot.rows[grid.index(traj.last_cell())];
            let q = quit_probability(traj.len(), params.lambda, row.quit);
            if rng.gen::<f64>() < q {
                traj.active = false;
                continue;
            }
            let next = row.neighbors[sample_weighted(&row.move_probs, rng)];
            traj.cells.push(grid.cell_at(next as usize));
            still_active.push(i);
        }
        self.active = still_active;
    }

    /// Grows or shrinks the active set to exactly `target`. New trajectories
    /// start at tick `t` in cells drawn from the entering distribution;
    /// victims are drawn without replacement with weight equal to the
    /// quitting probability of their last cell.
    pub fn adjust_size<R: Rng + ?Sized>(
        &mut self,
        target: usize,
        snapshot: &MobilitySnapshot,
        t: u32,
        rng: &mut R,
    ) {
        let current = self.active.len();
        if current < target {
            for _ in current..target {
                let c = sample_weighted(&snapshot.enter, rng);
                self.spawn(t, snapshot.grid.cell_at(c));
            }
        } else if current > target {
            self.terminate_weighted(current - target, snapshot, t, rng);
        }
    }

    /// A victim that already received a cell for tick `t` loses it, so it
    /// quits at `t` from the cell it held at `t - 1`.
    fn terminate_weighted<R: Rng + ?Sized>(
        &mut self,
        count: usize,
        snapshot: &MobilitySnapshot,
        t: u32,
        rng: &mut R,
    ) {
        // Successive weighted sampling without replacement via exponential
        // keys: take the `count` largest ln(u)/w. Zero-weight trajectories
        // rank after all positive ones, in random order.
        let grid = &snapshot.grid;
        let mut keyed: Vec<(bool, f64, usize)> = self
            .active
            .iter()
            .map(|&i| {
                let tr = &self.trajectories[i];
                let w = snapshot.quit[grid.index(tr.final_cell_if_quit_at(t))];
                let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
                if w > 0.0 {
                    (true, u.ln() / w, i)
                } else {
                    (false, u, i)
                }
            })
            .collect();
        keyed.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.total_cmp(&a.1)));
        let mut victims: Vec<usize> = keyed.iter().take(count).map(|k| k.2).collect();
        victims.sort_unstable();
        for &v in &victims {
            let tr = &mut self.trajectories[v];
            if tr.len() > 1 && tr.start + tr.len() as u32 - 1 == t {
                tr.cells.pop();
            }
            tr.active = false;
        }
        self.active.retain(|i| victims.binary_search(i).is_err());
    }

    /// Populates an empty database with `target` fresh trajectories.
    pub fn initialize<R: Rng + ?Sized>(
        &mut self,
        target: usize,
        snapshot: &MobilitySnapshot,
        t: u32,
        rng: &mut R,
    ) {
        debug_assert!(self.trajectories.is_empty());
        self.adjust_size(target, snapshot, t, rng);
    }

    /// `(synthetic id, tick, centroid x, centroid y)` for every point.
    pub fn points<'a>(
        &'a self,
        grid: &'a GridSpec,
    ) -> impl Iterator<Item = (u64, u32, f64, f64)> + 'a {
        self.trajectories.iter().flat_map(move |tr| {
            tr.cells.iter().enumerate().map(move |(i, &c)| {
                let (x, y) = grid.centroid(c);
                (tr.id, tr.start + i as u32, x, y)
            })
        })
    }
}
