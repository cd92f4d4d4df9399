//! Curator-side global mobility model and the selective (significant
//! transition) update.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Cell, GridSpec, TransitionDomain};
use crate::oracle::{variance, FrequencyEstimate, PrivacyParams};

/// Indicator over the transition domain of states whose fresh estimate is
/// adopted this tick.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignificantSet {
    pub selected: Vec<bool>,
}

impl SignificantSet {
    pub fn none(len: usize) -> Self {
        Self {
            selected: vec![false; len],
        }
    }

    pub fn all(len: usize) -> Self {
        Self {
            selected: vec![true; len],
        }
    }

    pub fn count(&self) -> usize {
        self.selected.iter().filter(|s| **s).count()
    }

    /// `|S*| / |S|`
    pub fn ratio(&self) -> f64 {
        if self.selected.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.selected.len() as f64
        }
    }
}

/// Selection rule minimizing the total update-plus-approximation error. The
/// objective is a sum of independent per-state terms, so each state is
/// selected iff its squared approximation error reaches the perturbation
/// variance.
pub fn significant_by_threshold(
    maintained: &[f64],
    fresh: &[f64],
    update_error: f64,
) -> SignificantSet {
    SignificantSet {
        selected: maintained
            .iter()
            .zip(fresh)
            .map(|(m, f)| (m - f).powi(2) >= update_error)
            .collect(),
    }
}

#[derive(Debug, Clone)]
pub struct GlobalMobilityModel {
    dom: Arc<TransitionDomain>,
    freqs: Vec<f64>,
    history: VecDeque<Vec<f64>>,
    history_cap: usize,
    sig_ratios: VecDeque<f64>,
    ratio_cap: usize,
}

impl GlobalMobilityModel {
    /// Empty (all-zero) model keeping `kappa + 1` frequency vectors and
    /// `kappa` significance ratios of history.
    pub fn new(dom: Arc<TransitionDomain>, kappa: usize) -> Self {
        let kappa = kappa.max(1);
        Self {
            freqs: vec![0.0; dom.len()],
            dom,
            history: VecDeque::with_capacity(kappa + 2),
            history_cap: kappa + 1,
            sig_ratios: VecDeque::with_capacity(kappa + 1),
            ratio_cap: kappa,
        }
    }

    pub fn domain(&self) -> &TransitionDomain {
        &self.dom
    }

    pub fn domain_arc(&self) -> Arc<TransitionDomain> {
        Arc::clone(&self.dom)
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.freqs
    }

    /// Oldest first.
    pub fn history(&self) -> &VecDeque<Vec<f64>> {
        &self.history
    }

    /// Oldest first.
    pub fn sig_ratio_history(&self) -> &VecDeque<f64> {
        &self.sig_ratios
    }

    pub fn record_sig_ratio(&mut self, ratio: f64) {
        self.sig_ratios.push_back(ratio.clamp(0.0, 1.0));
        while self.sig_ratios.len() > self.ratio_cap {
            self.sig_ratios.pop_front();
        }
    }

    fn push_history(&mut self) {
        self.history.push_back(self.freqs.clone());
        while self.history.len() > self.history_cap {
            self.history.pop_front();
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == self.freqs.len() {
            Ok(())
        } else {
            Err(Error::LengthMismatch(self.freqs.len(), len))
        }
    }

    pub fn select_significant(
        &self,
        fresh: &FrequencyEstimate,
        eps_t: PrivacyParams,
        n_t: usize,
    ) -> Result<SignificantSet> {
        if n_t == 0 || !fresh.is_usable() {
            return Err(Error::UnusableEstimate);
        }
        self.check_len(fresh.len())?;
        Ok(significant_by_threshold(
            &self.freqs,
            &fresh.values,
            variance(eps_t, n_t),
        ))
    }

    pub fn apply_update(&mut self, fresh: &FrequencyEstimate, sig: &SignificantSet) -> Result<()> {
        self.check_len(fresh.len())?;
        self.check_len(sig.selected.len())?;
        for ((f, &new), &sel) in self.freqs.iter_mut().zip(&fresh.values).zip(&sig.selected) {
            if sel {
                *f = new.max(0.0);
            }
        }
        self.push_history();
        Ok(())
    }

    /// Replaces every frequency with the (clipped) fresh estimate.
    pub fn initialize(&mut self, fresh: &FrequencyEstimate) -> Result<()> {
        self.apply_update(fresh, &SignificantSet::all(self.freqs.len()))
    }

    fn check_cell(&self, c: Cell) -> Result<usize> {
        let g = self.dom.grid();
        if g.contains(c) {
            Ok(g.index(c))
        } else {
            Err(Error::StateNotInDomain)
        }
    }

    fn row_denominator(&self, cell: usize) -> f64 {
        let moves: f64 = self.dom.move_range(cell).map(|i| self.freqs[i]).sum();
        moves + self.freqs[self.dom.quit_index(cell)]
    }

    /// Probability of moving `from -> to` (quitting included in the
    /// normalization). A row with no mass falls back to a uniform move over
    /// the neighbourhood and zero quit probability.
    pub fn move_prob(&self, from: Cell, to: Cell) -> Result<f64> {
        let fi = self.check_cell(from)?;
        let ti = self.check_cell(to)? as u32;
        let pos = self
            .dom
            .neighbor_indices(fi)
            .binary_search(&ti)
            .map_err(|_| Error::NonAdjacentQuery { from, to })?;
        let denom = self.row_denominator(fi);
        if denom > 0.0 {
            Ok(self.freqs[self.dom.move_range(fi).start + pos] / denom)
        } else {
            Ok(1.0 / self.dom.neighbor_indices(fi).len() as f64)
        }
    }

    pub fn quit_given_cell(&self, c: Cell) -> Result<f64> {
        let ci = self.check_cell(c)?;
        let denom = self.row_denominator(ci);
        if denom > 0.0 {
            Ok(self.freqs[self.dom.quit_index(ci)] / denom)
        } else {
            Ok(0.0)
        }
    }

    pub fn enter_dist(&self) -> Vec<f64> {
        let n = self.dom.grid().num_cells();
        normalize_or_uniform(
            (0..n)
                .map(|c| self.freqs[self.dom.enter_index(c)])
                .collect(),
        )
    }

    pub fn quit_dist(&self) -> Vec<f64> {
        let n = self.dom.grid().num_cells();
        normalize_or_uniform((0..n).map(|c| self.freqs[self.dom.quit_index(c)]).collect())
    }

    /// Immutable distributions for the synthesizer. With `with_enter_quit`
    /// off, rows are normalized over movement only and the entering and
    /// quitting distributions are uniform.
    pub fn snapshot(&self, with_enter_quit: bool) -> MobilitySnapshot {
        let dom = &*self.dom;
        let n = dom.grid().num_cells();
        let rows = (0..n)
            .map(|c| {
                let neighbors = dom.neighbor_indices(c).to_vec();
                let raw: Vec<f64> = dom.move_range(c).map(|i| self.freqs[i]).collect();
                let quit_raw = if with_enter_quit {
                    self.freqs[dom.quit_index(c)]
                } else {
                    0.0
                };
                let denom = raw.iter().sum::<f64>() + quit_raw;
                if denom > 0.0 {
                    TransitionRow {
                        move_probs: raw.iter().map(|f| f / denom).collect(),
                        quit: quit_raw / denom,
                        neighbors,
                    }
                } else {
                    TransitionRow {
                        move_probs: vec![1.0 / neighbors.len() as f64; neighbors.len()],
                        quit: 0.0,
                        neighbors,
                    }
                }
            })
            .collect();
        let (enter, quit) = if with_enter_quit {
            (self.enter_dist(), self.quit_dist())
        } else {
            (vec![1.0 / n as f64; n], vec![1.0 / n as f64; n])
        };
        MobilitySnapshot {
            grid: *dom.grid(),
            rows,
            enter,
            quit,
        }
    }

    pub fn to_snapshot_doc(&self) -> ModelDocument {
        ModelDocument {
            grid: *self.dom.grid(),
            domain_size: self.dom.len(),
            frequencies: self.freqs.clone(),
        }
    }

    /// Restores a model from a checkpoint document. History starts empty.
    pub fn from_snapshot_doc(doc: &ModelDocument, kappa: usize) -> Result<Self> {
        let grid = GridSpec::new(doc.grid.bbox, doc.grid.k)?;
        let dom = Arc::new(TransitionDomain::build(grid));
        if dom.len() != doc.domain_size || doc.frequencies.len() != dom.len() {
            return Err(Error::LengthMismatch(dom.len(), doc.frequencies.len()));
        }
        if doc.frequencies.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::invalid(
                "frequencies",
                "must be finite and non-negative",
            ));
        }
        let mut model = Self::new(dom, kappa);
        model.freqs.clone_from(&doc.frequencies);
        Ok(model)
    }
}

fn normalize_or_uniform(mut v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter_mut().for_each(|x| *x /= total);
    } else {
        let u = 1.0 / v.len() as f64;
        v.iter_mut().for_each(|x| *x = u);
    }
    v
}

/// JSON checkpoint of a model: grid descriptor plus frequency vector in
/// domain order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub grid: GridSpec,
    pub domain_size: usize,
    pub frequencies: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TransitionRow {
    /// Dense indices of the reachable cells, ascending.
    pub neighbors: Vec<u32>,
    pub move_probs: Vec<f64>,
    pub quit: f64,
}

#[derive(Debug, Clone)]
pub struct MobilitySnapshot {
    pub grid: GridSpec,
    pub rows: Vec<TransitionRow>,
    pub enter: Vec<f64>,
    pub quit: Vec<f64>,
}
