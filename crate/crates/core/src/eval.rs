//! Utility metrics comparing an original and a synthetic stream.
//!
//! Streaming metrics look at single ticks or random time ranges of `φ`
//! ticks; historical metrics look at whole trajectories. All divergences use
//! the natural-log Jensen-Shannon divergence, bounded by `ln 2`.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Cell, GridSpec, TransitionDomain, TransitionState};

/// Trajectories as cell sequences; cell `i` of a trajectory is its location
/// at tick `start + i`. A trajectory whose last cell lies before
/// `last_tick` quit on the following tick.
#[derive(Debug, Clone)]
pub struct TrajectorySet {
    pub grid: GridSpec,
    pub first_tick: u32,
    pub last_tick: u32,
    pub trajectories: Vec<CellTrajectory>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellTrajectory {
    pub start: u32,
    pub cells: Vec<Cell>,
}

impl CellTrajectory {
    pub fn end(&self) -> u32 {
        self.start + self.cells.len() as u32 - 1
    }

    pub fn cell_at(&self, t: u32) -> Option<Cell> {
        t.checked_sub(self.start)
            .and_then(|off| self.cells.get(off as usize).copied())
    }

    /// Transition state at tick `t`, if the trajectory has one.
    pub fn state_at(&self, t: u32) -> Option<TransitionState> {
        let off = t.checked_sub(self.start)? as usize;
        match off {
            0 => Some(TransitionState::Enter { at: self.cells[0] }),
            o if o < self.cells.len() => Some(TransitionState::Move {
                from: self.cells[o - 1],
                to: self.cells[o],
            }),
            o if o == self.cells.len() => Some(TransitionState::Quit {
                last: self.cells[o - 1],
            }),
            _ => None,
        }
    }
}

impl TrajectorySet {
    pub fn num_ticks(&self) -> u32 {
        self.last_tick - self.first_tick + 1
    }

    pub fn num_points(&self) -> usize {
        self.trajectories.iter().map(|t| t.cells.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Time-range size in ticks.
    pub phi: u32,
    /// Number of random queries / ranges per range-based metric.
    pub n_queries: usize,
    pub n_hotspot: usize,
    pub n_patterns: usize,
    pub pattern_lengths: Vec<usize>,
    pub sanity_fraction: f64,
    /// Number of length buckets before the overflow bucket; defaults to the
    /// longest trajectory of either set.
    pub length_buckets: Option<usize>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            phi: 20,
            n_queries: 100,
            n_hotspot: 10,
            n_patterns: 100,
            pattern_lengths: vec![2, 3, 4],
            sanity_fraction: 0.01,
            length_buckets: None,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.phi == 0 || self.n_queries == 0 || self.n_hotspot == 0 || self.n_patterns == 0 {
            return Err(Error::invalid("eval", "all counts must be >= 1"));
        }
        if self.pattern_lengths.is_empty()
            || self.pattern_lengths.iter().any(|l| !(1..=8).contains(l))
        {
            return Err(Error::invalid(
                "pattern_lengths",
                "lengths must be in 1..=8",
            ));
        }
        if !(self.sanity_fraction > 0.0 && self.sanity_fraction < 1.0) {
            return Err(Error::invalid("sanity_fraction", "must be in (0, 1)"));
        }
        if self.length_buckets == Some(0) {
            return Err(Error::invalid("length_buckets", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub density_error: f64,
    pub query_error: f64,
    pub hotspot_ndcg: f64,
    pub transition_error: f64,
    pub pattern_f1: f64,
    pub kendall_tau: f64,
    pub trip_error: f64,
    pub length_error: f64,
    pub config: EvalConfig,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

fn check_distribution(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|v| *v < 0.0 || !v.is_finite()) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(
            "distribution",
            format!("must be non-negative and sum to 1, sums to {sum}"),
        ));
    }
    Ok(())
}

fn kl_term(p: f64, m: f64) -> f64 {
    if p > 0.0 {
        p * (p / m).ln()
    } else {
        0.0
    }
}

/// Natural-log Jensen-Shannon divergence of two probability vectors. All-zero
/// vectors are read as uniform.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(p.len(), q.len()));
    }
    let fix = |v: &[f64]| -> Result<Vec<f64>> {
        if v.iter().all(|x| *x == 0.0) {
            Ok(vec![1.0 / v.len() as f64; v.len()])
        } else {
            check_distribution(v)?;
            Ok(v.to_vec())
        }
    };
    let (p, q) = (fix(p)?, fix(q)?);
    let mut d = 0.0;
    for (a, b) in p.iter().zip(&q) {
        let m = 0.5 * (a + b);
        d += 0.5 * kl_term(*a, m) + 0.5 * kl_term(*b, m);
    }
    Ok(d.clamp(0.0, std::f64::consts::LN_2))
}

/// JSD of two count vectors after normalization.
pub fn jsd_counts(a: &[f64], b: &[f64]) -> Result<f64> {
    jsd(&normalized(a), &normalized(b))
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter().map(|x| x / s).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// JSD over sparse count maps sharing a key space.
fn jsd_sparse(a: &BTreeMap<u64, f64>, b: &BTreeMap<u64, f64>) -> f64 {
    let (sa, sb): (f64, f64) = (a.values().sum(), b.values().sum());
    if sa == 0.0 && sb == 0.0 {
        return 0.0;
    }
    if sa == 0.0 || sb == 0.0 {
        // one side uniform over an unbounded key space; treat as disjoint
        return std::f64::consts::LN_2;
    }
    let mut keys: Vec<u64> = a.keys().chain(b.keys()).copied().collect();
    keys.sort_unstable();
    keys.dedup();
    let mut d = 0.0;
    for k in keys {
        let p = a.get(&k).copied().unwrap_or(0.0) / sa;
        let q = b.get(&k).copied().unwrap_or(0.0) / sb;
        let m = 0.5 * (p + q);
        d += 0.5 * kl_term(p, m) + 0.5 * kl_term(q, m);
    }
    d.clamp(0.0, std::f64::consts::LN_2)
}

/// Per-tick occupancy and transition counts of one trajectory set.
#[derive(Debug, Clone)]
pub struct StreamIndex {
    first_tick: u32,
    cells: usize,
    // occupancy[t][cell]
    occupancy: Vec<Vec<u32>>,
    // transitions[t][state]
    transitions: Vec<Vec<u32>>,
}

impl StreamIndex {
    /// Counts restricted to the tick horizon `[first_tick, last_tick]`.
    pub fn build(set: &TrajectorySet, dom: &TransitionDomain) -> Self {
        let ticks = set.num_ticks() as usize;
        let cells = set.grid.num_cells();
        let mut occupancy = vec![vec![0u32; cells]; ticks];
        let mut transitions = vec![vec![0u32; dom.len()]; ticks];
        let in_range = |t: u32| t >= set.first_tick && t <= set.last_tick;
        for tr in &set.trajectories {
            for (i, c) in tr.cells.iter().enumerate() {
                let t = tr.start + i as u32;
                if in_range(t) {
                    occupancy[(t - set.first_tick) as usize][set.grid.index(*c)] += 1;
                }
            }
            for t in tr.start..=tr.end() + 1 {
                if !in_range(t) {
                    continue;
                }
                if let Some(idx) = tr.state_at(t).and_then(|s| dom.index_of(s)) {
                    transitions[(t - set.first_tick) as usize][idx] += 1;
                }
            }
        }
        Self {
            first_tick: set.first_tick,
            cells,
            occupancy,
            transitions,
        }
    }

    pub fn occupancy_at(&self, t: u32) -> &[u32] {
        &self.occupancy[(t - self.first_tick) as usize]
    }

    pub fn transitions_at(&self, t: u32) -> &[u32] {
        &self.transitions[(t - self.first_tick) as usize]
    }

    fn range_counts(&self, t0: u32, t1: u32) -> Vec<f64> {
        let mut out = vec![0.0; self.cells];
        for t in t0..t1 {
            for (o, c) in out.iter_mut().zip(self.occupancy_at(t)) {
                *o += *c as f64;
            }
        }
        out
    }
}

fn as_f64(v: &[u32]) -> Vec<f64> {
    v.iter().map(|x| *x as f64).collect()
}

fn check_horizon(orig: &TrajectorySet, syn: &TrajectorySet) -> Result<()> {
    if orig.grid != syn.grid {
        return Err(Error::invalid(
            "grid",
            "original and synthetic sets use different grids",
        ));
    }
    if orig.first_tick != syn.first_tick || orig.last_tick != syn.last_tick {
        return Err(Error::invalid(
            "ticks",
            "original and synthetic sets cover different ticks",
        ));
    }
    Ok(())
}

pub fn density_error_at(orig: &StreamIndex, syn: &StreamIndex, t: u32) -> f64 {
    jsd_counts(&as_f64(orig.occupancy_at(t)), &as_f64(syn.occupancy_at(t))).unwrap_or(0.0)
}

pub fn transition_error_at(orig: &StreamIndex, syn: &StreamIndex, t: u32) -> f64 {
    jsd_counts(
        &as_f64(orig.transitions_at(t)),
        &as_f64(syn.transitions_at(t)),
    )
    .unwrap_or(0.0)
}

/// Mean of `per_tick` over ticks where either stream has data.
fn averaged(
    orig: &StreamIndex,
    syn: &StreamIndex,
    first: u32,
    last: u32,
    has_data: impl Fn(&StreamIndex, u32) -> bool,
    per_tick: impl Fn(&StreamIndex, &StreamIndex, u32) -> f64,
) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for t in first..=last {
        if has_data(orig, t) || has_data(syn, t) {
            sum += per_tick(orig, syn, t);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// A rectangular block of cells over ticks `[t0, t1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RangeQuery {
    pub ix: (u16, u16),
    pub iy: (u16, u16),
    pub t0: u32,
    pub t1: u32,
}

impl RangeQuery {
    pub fn contains(&self, c: Cell) -> bool {
        (self.ix.0..=self.ix.1).contains(&c.ix) && (self.iy.0..=self.iy.1).contains(&c.iy)
    }

    fn count(&self, idx: &StreamIndex, grid: &GridSpec) -> f64 {
        let mut total = 0.0;
        for t in self.t0..self.t1 {
            let occ = idx.occupancy_at(t);
            for ix in self.ix.0..=self.ix.1 {
                for iy in self.iy.0..=self.iy.1 {
                    total += occ[grid.index(Cell::new(ix, iy))] as f64;
                }
            }
        }
        total
    }
}

/// Relative error of one range query with the sanity bound
/// `max(Q(orig), sanity)`; an empty denominator scores 0 when the synthetic
/// count is also 0 and 1 otherwise.
pub fn relative_error(q_orig: f64, q_syn: f64, sanity: f64) -> f64 {
    let denom = q_orig.max(sanity);
    if denom > 0.0 {
        (q_orig - q_syn).abs() / denom
    } else if q_syn == 0.0 {
        0.0
    } else {
        1.0
    }
}

fn random_range<R: Rng>(rng: &mut R, first: u32, last: u32, phi: u32) -> (u32, u32) {
    let t0 = rng.gen_range(first..=last + 1 - phi);
    (t0, t0 + phi)
}

fn random_queries(cfg: &EvalConfig, grid: &GridSpec, first: u32, last: u32) -> Vec<RangeQuery> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let k = grid.k as u16;
    (0..cfg.n_queries)
        .map(|_| {
            let (a, b) = (rng.gen_range(0..k), rng.gen_range(0..k));
            let (c, d) = (rng.gen_range(0..k), rng.gen_range(0..k));
            let (t0, t1) = random_range(&mut rng, first, last, cfg.phi);
            RangeQuery {
                ix: (a.min(b), a.max(b)),
                iy: (c.min(d), c.max(d)),
                t0,
                t1,
            }
        })
        .collect()
}

fn random_ranges(cfg: &EvalConfig, stream: u64, first: u32, last: u32) -> Vec<(u32, u32)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    (0..cfg.n_queries)
        .map(|_| random_range(&mut rng, first, last, cfg.phi))
        .collect()
}

pub fn query_error_for(
    orig: &StreamIndex,
    syn: &StreamIndex,
    grid: &GridSpec,
    queries: &[RangeQuery],
    sanity_fraction: f64,
) -> f64 {
    if queries.is_empty() {
        return 0.0;
    }
    let total: f64 = queries
        .iter()
        .map(|q| {
            let in_range: f64 = orig.range_counts(q.t0, q.t1).iter().sum();
            relative_error(
                q.count(orig, grid),
                q.count(syn, grid),
                sanity_fraction * in_range,
            )
        })
        .sum();
    total / queries.len() as f64
}

/// Cells with positive count, by count descending then cell index.
fn top_cells(counts: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..counts.len()).filter(|&i| counts[i] > 0.0).collect();
    idx.sort_by(|&a, &b| counts[b].total_cmp(&counts[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

/// NDCG@n of the synthetic hotspot ranking, with the original counts as
/// graded relevance.
pub fn ndcg_at(orig_counts: &[f64], syn_counts: &[f64], n: usize) -> f64 {
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let syn_top = top_cells(syn_counts, n);
    let ideal: f64 = top_cells(orig_counts, n)
        .iter()
        .enumerate()
        .map(|(i, &c)| orig_counts[c] * discount(i))
        .sum();
    if ideal == 0.0 {
        return if syn_top.is_empty() { 1.0 } else { 0.0 };
    }
    let dcg: f64 = syn_top
        .iter()
        .enumerate()
        .map(|(i, &c)| orig_counts[c] * discount(i))
        .sum();
    dcg / ideal
}

/// F1 of two top-N sets, 1 when both are empty.
pub fn f1_score<T: Eq + std::hash::Hash>(a: &[T], b: &[T]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let set: std::collections::HashSet<&T> = a.iter().collect();
    let common = b.iter().filter(|x| set.contains(x)).count();
    2.0 * common as f64 / (a.len() + b.len()) as f64
}

fn pattern_key(cells: &[Cell], grid: &GridSpec) -> u128 {
    cells
        .iter()
        .fold(0u128, |k, c| (k << 16) | (grid.index(*c) as u128 + 1))
}

/// Top-`n` most frequent contiguous cell patterns within ticks `[t0, t1)`.
pub fn top_patterns(
    set: &TrajectorySet,
    t0: u32,
    t1: u32,
    lengths: &[usize],
    n: usize,
) -> Vec<u128> {
    let mut counts: HashMap<u128, u32> = HashMap::new();
    for tr in &set.trajectories {
        if tr.end() < t0 || tr.start >= t1 {
            continue;
        }
        let lo = t0.saturating_sub(tr.start) as usize;
        let hi = ((t1 - tr.start) as usize).min(tr.cells.len());
        let slice = &tr.cells[lo..hi];
        for &len in lengths {
            for win in slice.windows(len) {
                *counts.entry(pattern_key(win, &set.grid)).or_insert(0) += 1;
            }
        }
    }
    let mut ranked: Vec<(u128, u32)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(n);
    ranked.into_iter().map(|(k, _)| k).collect()
}

/// Tie-aware Kendall tau-b; 0 when either side is constant.
pub fn kendall_tau_b(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let (mut concordant, mut discordant, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let da = a[i].total_cmp(&a[j]) as i64;
            let db = b[i].total_cmp(&b[j]) as i64;
            match (da, db) {
                (0, 0) => {}
                (0, _) => ties_a += 1,
                (_, 0) => ties_b += 1,
                _ if da == db => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n_a = (concordant + discordant + ties_b) as f64;
    let n_b = (concordant + discordant + ties_a) as f64;
    if n_a == 0.0 || n_b == 0.0 {
        return Ok(0.0);
    }
    Ok((concordant - discordant) as f64 / (n_a * n_b).sqrt())
}

fn total_visits(set: &TrajectorySet) -> Vec<f64> {
    let mut v = vec![0.0; set.grid.num_cells()];
    for tr in &set.trajectories {
        for c in &tr.cells {
            v[set.grid.index(*c)] += 1.0;
        }
    }
    v
}

pub fn kendall_tau(orig: &TrajectorySet, syn: &TrajectorySet) -> Result<f64> {
    kendall_tau_b(&total_visits(orig), &total_visits(syn))
}

fn trip_counts(set: &TrajectorySet) -> BTreeMap<u64, f64> {
    let n = set.grid.num_cells() as u64;
    let mut m = BTreeMap::new();
    for tr in &set.trajectories {
        let s = set.grid.index(tr.cells[0]) as u64;
        let e = set.grid.index(*tr.cells.last().unwrap()) as u64;
        *m.entry(s * n + e).or_insert(0.0) += 1.0;
    }
    m
}

/// JSD between the joint (start cell, end cell) distributions.
pub fn trip_error(orig: &TrajectorySet, syn: &TrajectorySet) -> f64 {
    jsd_sparse(&trip_counts(orig), &trip_counts(syn))
}

fn max_len(set: &TrajectorySet) -> usize {
    set.trajectories
        .iter()
        .map(|t| t.cells.len())
        .max()
        .unwrap_or(0)
}

/// JSD between trajectory-length histograms with buckets `1..=buckets` plus
/// an overflow bucket.
pub fn length_error(orig: &TrajectorySet, syn: &TrajectorySet, buckets: Option<usize>) -> f64 {
    let buckets = buckets.unwrap_or_else(|| max_len(orig).max(max_len(syn)).max(1));
    let hist = |set: &TrajectorySet| {
        let mut h = vec![0.0; buckets + 1];
        for tr in &set.trajectories {
            h[(tr.cells.len().max(1) - 1).min(buckets)] += 1.0;
        }
        h
    };
    jsd_counts(&hist(orig), &hist(syn)).unwrap_or(0.0)
}

/// Per-tick density and transition errors, for plotting.
pub fn per_tick_errors(orig: &TrajectorySet, syn: &TrajectorySet) -> Result<Vec<(u32, f64, f64)>> {
    check_horizon(orig, syn)?;
    let dom = TransitionDomain::build(orig.grid);
    let (oi, si) = (
        StreamIndex::build(orig, &dom),
        StreamIndex::build(syn, &dom),
    );
    Ok((orig.first_tick..=orig.last_tick)
        .map(|t| {
            (
                t,
                density_error_at(&oi, &si, t),
                transition_error_at(&oi, &si, t),
            )
        })
        .collect())
}

pub fn evaluate(
    orig: &TrajectorySet,
    syn: &TrajectorySet,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    cfg.validate()?;
    check_horizon(orig, syn)?;
    if orig.num_ticks() < cfg.phi {
        return Err(Error::StreamTooShort {
            ticks: orig.num_ticks(),
            phi: cfg.phi,
        });
    }
    let grid = orig.grid;
    let dom = TransitionDomain::build(grid);
    let (oi, si) = (
        StreamIndex::build(orig, &dom),
        StreamIndex::build(syn, &dom),
    );
    let (first, last) = (orig.first_tick, orig.last_tick);

    let occupied = |idx: &StreamIndex, t: u32| idx.occupancy_at(t).iter().any(|c| *c > 0);
    let transitioned = |idx: &StreamIndex, t: u32| idx.transitions_at(t).iter().any(|c| *c > 0);
    let density_error = averaged(&oi, &si, first, last, occupied, density_error_at);
    let transition_error = averaged(&oi, &si, first, last, transitioned, transition_error_at);

    let queries = random_queries(cfg, &grid, first, last);
    let query_error = query_error_for(&oi, &si, &grid, &queries, cfg.sanity_fraction);

    let hot_ranges = random_ranges(cfg, 2, first, last);
    let hotspot_ndcg = hot_ranges
        .iter()
        .map(|&(t0, t1)| {
            ndcg_at(
                &oi.range_counts(t0, t1),
                &si.range_counts(t0, t1),
                cfg.n_hotspot,
            )
        })
        .sum::<f64>()
        / hot_ranges.len() as f64;

    let pat_ranges = random_ranges(cfg, 3, first, last);
    let pattern_f1 = pat_ranges
        .iter()
        .map(|&(t0, t1)| {
            f1_score(
                &top_patterns(orig, t0, t1, &cfg.pattern_lengths, cfg.n_patterns),
                &top_patterns(syn, t0, t1, &cfg.pattern_lengths, cfg.n_patterns),
            )
        })
        .sum::<f64>()
        / pat_ranges.len() as f64;

    Ok(MetricsReport {
        density_error,
        query_error,
        hotspot_ndcg,
        transition_error,
        pattern_f1,
        kendall_tau: kendall_tau(orig, syn)?,
        trip_error: trip_error(orig, syn),
        length_error: length_error(orig, syn, cfg.length_buckets),
        config: cfg.clone(),
        metadata: BTreeMap::new(),
    })
}
