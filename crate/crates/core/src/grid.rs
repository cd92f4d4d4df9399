//! Uniform K×K discretization of the study area and the transition-state
//! domain built on top of it.
//!
//! Transition states are indexed densely in a fixed order: all movement
//! states sorted by `(from, to)` dense cell index, then entering states by
//! cell index, then quitting states by cell index. Encoded report vectors
//! depend on this order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported grid side. Cell coordinates are stored as `u16` and
/// pattern keys in the evaluator pack cell indices into 16 bits.
pub const MAX_GRID_SIDE: usize = 255;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BoundingBox {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self> {
        let bbox = Self {
            min_x,
            min_y,
            max_x,
            max_y,
        };
        bbox.validate()?;
        Ok(bbox)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.min_x, self.min_y, self.max_x, self.max_y]
            .iter()
            .all(|v| v.is_finite());
        if finite && self.max_x > self.min_x && self.max_y > self.min_y {
            Ok(())
        } else {
            Err(Error::InvalidBoundingBox)
        }
    }

    /// Smallest box covering `points`, padded when degenerate along an axis.
    pub fn covering(points: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut it = points.into_iter();
        let (x0, y0) = it.next().ok_or(Error::EmptyInput)?;
        let (mut min_x, mut min_y, mut max_x, mut max_y) = (x0, y0, x0, y0);
        for (x, y) in it {
            min_x = min_x.min(x);
            min_y = min_y.min(y);
            max_x = max_x.max(x);
            max_y = max_y.max(y);
        }
        if max_x <= min_x {
            max_x = min_x + 1.0;
        }
        if max_y <= min_y {
            max_y = min_y + 1.0;
        }
        Self::new(min_x, min_y, max_x, max_y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub ix: u16,
    pub iy: u16,
}

impl Cell {
    pub const fn new(ix: u16, iy: u16) -> Self {
        Self { ix, iy }
    }

    /// Chebyshev distance between two cells.
    pub fn distance(self, other: Cell) -> u16 {
        self.ix.abs_diff(other.ix).max(self.iy.abs_diff(other.iy))
    }

    pub fn is_adjacent(self, other: Cell) -> bool {
        self.distance(other) <= 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bbox: BoundingBox,
    pub k: usize,
}

impl GridSpec {
    pub fn new(bbox: BoundingBox, k: usize) -> Result<Self> {
        bbox.validate()?;
        if k == 0 || k > MAX_GRID_SIDE {
            return Err(Error::invalid(
                "k",
                format!("grid side must be in 1..={MAX_GRID_SIDE}, got {k}"),
            ));
        }
        Ok(Self { bbox, k })
    }

    pub fn cell_width(&self) -> f64 {
        (self.bbox.max_x - self.bbox.min_x) / self.k as f64
    }

    pub fn cell_height(&self) -> f64 {
        (self.bbox.max_y - self.bbox.min_y) / self.k as f64
    }

    pub fn num_cells(&self) -> usize {
        self.k * self.k
    }

    pub fn contains(&self, c: Cell) -> bool {
        (c.ix as usize) < self.k && (c.iy as usize) < self.k
    }

    /// Dense index `ix·K + iy`.
    pub fn index(&self, c: Cell) -> usize {
        c.ix as usize * self.k + c.iy as usize
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        debug_assert!(index < self.num_cells());
        Cell::new((index / self.k) as u16, (index % self.k) as u16)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.num_cells()).map(|i| self.cell_at(i))
    }

    /// Cell containing `(x, y)`. Points on the upper boundary or outside the
    /// box are clamped to the nearest valid cell.
    pub fn discretize(&self, x: f64, y: f64) -> Cell {
        let clamp = |v: f64, lo: f64, size: f64| -> u16 {
            let raw = ((v - lo) / size).floor();
            if raw.is_nan() || raw < 0.0 {
                0
            } else {
                (raw as usize).min(self.k - 1) as u16
            }
        };
        Cell::new(
            clamp(x, self.bbox.min_x, self.cell_width()),
            clamp(y, self.bbox.min_y, self.cell_height()),
        )
    }

    pub fn centroid(&self, c: Cell) -> (f64, f64) {
        (
            self.bbox.min_x + (c.ix as f64 + 0.5) * self.cell_width(),
            self.bbox.min_y + (c.iy as f64 + 0.5) * self.cell_height(),
        )
    }

    /// Moore neighbourhood of `c` clipped to the grid, including `c` itself,
    /// in ascending dense-index order.
    pub fn neighbors(&self, c: Cell) -> Vec<Cell> {
        let k = self.k as i32;
        let mut out = Vec::with_capacity(9);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let (x, y) = (c.ix as i32 + dx, c.iy as i32 + dy);
                if (0..k).contains(&x) && (0..k).contains(&y) {
                    out.push(Cell::new(x as u16, y as u16));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransitionState {
    Move { from: Cell, to: Cell },
    Enter { at: Cell },
    Quit { last: Cell },
}

/// Derives the transition state from the previous and current cells of a
/// stream. Rejects jumps that violate the reachability constraint.
pub fn transition_of(prev: Option<Cell>, cur: Option<Cell>) -> Result<TransitionState> {
    match (prev, cur) {
        (None, None) => Err(Error::EmptyTransition),
        (None, Some(at)) => Ok(TransitionState::Enter { at }),
        (Some(last), None) => Ok(TransitionState::Quit { last }),
        (Some(from), Some(to)) if from.is_adjacent(to) => Ok(TransitionState::Move { from, to }),
        (Some(from), Some(to)) => Err(Error::NonAdjacentMove { from, to }),
    }
}

/// Every legal transition state of a grid with a bijective dense index.
#[derive(Debug, Clone)]
pub struct TransitionDomain {
    grid: GridSpec,
    states: Vec<TransitionState>,
    // neighbour dense indices per source cell, ascending
    neighbors: Vec<Vec<u32>>,
    // index of the first movement state of each source cell
    move_offsets: Vec<usize>,
    enter_base: usize,
    quit_base: usize,
}

impl TransitionDomain {
    pub fn build(grid: GridSpec) -> Self {
        let n = grid.num_cells();
        let mut states = Vec::with_capacity(11 * n);
        let mut neighbors = Vec::with_capacity(n);
        let mut move_offsets = Vec::with_capacity(n + 1);
        for from in grid.cells() {
            move_offsets.push(states.len());
            let nb = grid.neighbors(from);
            for &to in &nb {
                states.push(TransitionState::Move { from, to });
            }
            neighbors.push(nb.iter().map(|&c| grid.index(c) as u32).collect());
        }
        move_offsets.push(states.len());
        let enter_base = states.len();
        states.extend(grid.cells().map(|at| TransitionState::Enter { at }));
        let quit_base = states.len();
        states.extend(grid.cells().map(|last| TransitionState::Quit { last }));
        Self {
            grid,
            states,
            neighbors,
            move_offsets,
            enter_base,
            quit_base,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn num_moves(&self) -> usize {
        self.enter_base
    }

    pub fn states(&self) -> &[TransitionState] {
        &self.states
    }

    pub fn state(&self, index: usize) -> Option<TransitionState> {
        self.states.get(index).copied()
    }

    pub fn index_of(&self, state: TransitionState) -> Option<usize> {
        match state {
            TransitionState::Move { from, to } => {
                if !self.grid.contains(from) || !self.grid.contains(to) {
                    return None;
                }
                let fi = self.grid.index(from);
                let ti = self.grid.index(to) as u32;
                self.neighbors[fi]
                    .binary_search(&ti)
                    .ok()
                    .map(|pos| self.move_offsets[fi] + pos)
            }
            TransitionState::Enter { at } => self
                .grid
                .contains(at)
                .then(|| self.enter_base + self.grid.index(at)),
            TransitionState::Quit { last } => self
                .grid
                .contains(last)
                .then(|| self.quit_base + self.grid.index(last)),
        }
    }

    /// Domain indices of the movement states leaving `cell`, aligned with
    /// [`Self::neighbor_indices`].
    pub fn move_range(&self, cell: usize) -> std::ops::Range<usize> {
        self.move_offsets[cell]..self.move_offsets[cell + 1]
    }

    /// Dense indices of the neighbours of `cell`, ascending.
    pub fn neighbor_indices(&self, cell: usize) -> &[u32] {
        &self.neighbors[cell]
    }

    pub fn enter_index(&self, cell: usize) -> usize {
        self.enter_base + cell
    }

    pub fn quit_index(&self, cell: usize) -> usize {
        self.quit_base + cell
    }
}
