//! w-event budget and population accounting.
//!
//! Budget division spends a per-tick share `ε_t` of the window budget with
//! every present user; the [`WindowLedger`] asserts that any `w` consecutive
//! ticks sum to at most `ε`. Population division spends the full `ε` with a
//! sampled subset of active users; the [`UserRegistry`] asserts that no user
//! reports twice within `w` ticks.

use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobility::GlobalMobilityModel;
use crate::oracle::PrivacyParams;

const LEDGER_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Adaptive,
    Uniform,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Division {
    Budget,
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AllocationParams {
    pub alpha: f64,
    pub kappa: usize,
    pub p_max: f64,
    pub strategy: Strategy,
    pub division: Division,
    /// Adaptive budget division skips a tick whose share falls below this.
    pub budget_floor: f64,
}

impl Default for AllocationParams {
    fn default() -> Self {
        Self {
            alpha: 8.0,
            kappa: 5,
            p_max: 0.6,
            strategy: Strategy::Adaptive,
            division: Division::Population,
            budget_floor: 1e-3,
        }
    }
}

impl AllocationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha", "must be > 0"));
        }
        if self.kappa == 0 {
            return Err(Error::invalid("kappa", "must be >= 1"));
        }
        if !(self.p_max > 0.0 && self.p_max <= 1.0) {
            return Err(Error::invalid("p_max", "must be in (0, 1]"));
        }
        if !(self.budget_floor >= 0.0 && self.budget_floor.is_finite()) {
            return Err(Error::invalid("budget_floor", "must be >= 0"));
        }
        Ok(())
    }
}

/// Summed absolute difference between the latest history vector and the
/// mean of up to `kappa` vectors preceding it. Zero with fewer than two
/// vectors.
pub fn deviation_of(history: &VecDeque<Vec<f64>>, kappa: usize) -> f64 {
    let len = history.len();
    if len < 2 || kappa == 0 {
        return 0.0;
    }
    let latest = &history[len - 1];
    let take = kappa.min(len - 1);
    let window = history.range(len - 1 - take..len - 1);
    let mut mean = vec![0.0; latest.len()];
    for v in window {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    latest
        .iter()
        .zip(&mean)
        .map(|(l, m)| (l - m / take as f64).abs())
        .sum()
}

pub fn deviation(model: &GlobalMobilityModel, kappa: usize) -> f64 {
    deviation_of(model.history(), kappa)
}

/// Adaptive portion `min{(α/w)(1 − mean ratio) ln(dev + 1), p_max}` over
/// the last `κ` significance ratios (an empty history counts as mean 0).
pub fn portion(dev: f64, sig_ratios: &[f64], w: usize, params: &AllocationParams) -> f64 {
    let recent = &sig_ratios[sig_ratios.len().saturating_sub(params.kappa)..];
    let mean = if recent.is_empty() {
        0.0
    } else {
        recent.iter().map(|r| r.clamp(0.0, 1.0)).sum::<f64>() / recent.len() as f64
    };
    let dev = if dev.is_finite() { dev.max(0.0) } else { 0.0 };
    let p = params.alpha / w as f64 * (1.0 - mean) * dev.ln_1p();
    p.min(params.p_max).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserStatus {
    Active,
    Inactive,
    Quitted,
}

#[derive(Debug, Clone, Copy)]
struct UserEntry {
    status: UserStatus,
    last_report: Option<u32>,
}

/// Status of every user the curator has seen, keyed by dense user id.
#[derive(Debug, Clone)]
pub struct UserRegistry {
    w: usize,
    users: Vec<Option<UserEntry>>,
    reports: VecDeque<(u32, Vec<u32>)>,
}

impl UserRegistry {
    pub fn new(w: usize) -> Self {
        Self {
            w,
            users: Vec::new(),
            reports: VecDeque::new(),
        }
    }

    fn within_window(&self, last: Option<u32>, t: u32) -> bool {
        last.is_some_and(|l| (t.saturating_sub(l) as usize) < self.w)
    }

    /// Registers a user whose stream (re)starts at tick `t`. A returning user
    /// who reported within the current window comes back inactive so the
    /// per-window report limit still holds.
    pub fn arrive(&mut self, user: u32, t: u32) {
        let idx = user as usize;
        if idx >= self.users.len() {
            self.users.resize(idx + 1, None);
        }
        let last_report = match self.users[idx] {
            Some(e) if e.status != UserStatus::Quitted => return,
            Some(e) => e.last_report,
            None => None,
        };
        let status = if self.within_window(last_report, t) {
            UserStatus::Inactive
        } else {
            UserStatus::Active
        };
        self.users[idx] = Some(UserEntry {
            status,
            last_report,
        });
    }

    pub fn depart(&mut self, user: u32) {
        if let Some(Some(e)) = self.users.get_mut(user as usize) {
            e.status = UserStatus::Quitted;
        }
    }

    pub fn status(&self, user: u32) -> Option<UserStatus> {
        self.users
            .get(user as usize)
            .copied()
            .flatten()
            .map(|e| e.status)
    }

    pub fn last_report(&self, user: u32) -> Option<u32> {
        self.users
            .get(user as usize)
            .copied()
            .flatten()
            .and_then(|e| e.last_report)
    }

    /// Reactivates users who reported at tick `t − w` and are still present.
    pub fn recycle(&mut self, t: u32) {
        let Some(due) = (t as usize).checked_sub(self.w).map(|d| d as u32) else {
            return;
        };
        while self.reports.front().is_some_and(|(tick, _)| *tick < due) {
            self.reports.pop_front();
        }
        if let Some((tick, users)) = self.reports.front() {
            if *tick == due {
                for &u in users {
                    if let Some(Some(e)) = self.users.get_mut(u as usize) {
                        if e.status == UserStatus::Inactive {
                            e.status = UserStatus::Active;
                        }
                    }
                }
            }
        }
    }

    /// Records that `users` reported at tick `t`, making them inactive.
    pub fn mark_reported(&mut self, users: &[u32], t: u32) -> Result<()> {
        for &u in users {
            let w = self.w;
            let entry = self
                .users
                .get_mut(u as usize)
                .and_then(Option::as_mut)
                .ok_or_else(|| Error::invalid("user", format!("user {u} is not registered")))?;
            if let Some(prev) = entry.last_report {
                if (t.saturating_sub(prev) as usize) < w {
                    return Err(Error::DoubleReport {
                        user: u,
                        previous: prev,
                        tick: t,
                    });
                }
            }
            entry.last_report = Some(t);
            if entry.status == UserStatus::Active {
                entry.status = UserStatus::Inactive;
            }
        }
        self.reports.push_back((t, users.to_vec()));
        Ok(())
    }

    pub fn active_users(&self) -> Vec<u32> {
        self.with_status(|s| s == UserStatus::Active)
    }

    /// Users registered and not quitted.
    pub fn present_users(&self) -> Vec<u32> {
        self.with_status(|s| s != UserStatus::Quitted)
    }

    fn with_status(&self, keep: impl Fn(UserStatus) -> bool) -> Vec<u32> {
        self.users
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.filter(|e| keep(e.status)).map(|_| i as u32))
            .collect()
    }
}

/// Per-tick budget spend over the last `w` ticks.
#[derive(Debug, Clone)]
pub struct WindowLedger {
    w: usize,
    epsilon: f64,
    spent: VecDeque<(u32, f64)>,
}

impl WindowLedger {
    pub fn new(w: usize, epsilon: f64) -> Self {
        Self {
            w,
            epsilon,
            spent: VecDeque::with_capacity(w + 1),
        }
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Budget left for the next tick: `ε` minus the last `w − 1` entries.
    pub fn remaining(&self) -> f64 {
        let skip = self.spent.len().saturating_sub(self.w - 1);
        let used: f64 = self.spent.iter().skip(skip).map(|(_, e)| e).sum();
        (self.epsilon - used).max(0.0)
    }

    /// Sum of the current window, the recorded tick included.
    pub fn window_sum(&self) -> f64 {
        self.spent.iter().map(|(_, e)| e).sum()
    }

    pub fn record(&mut self, t: u32, eps_t: f64) -> Result<()> {
        self.spent.push_back((t, eps_t));
        while self.spent.len() > self.w {
            self.spent.pop_front();
        }
        let spent = self.window_sum();
        if spent > self.epsilon + LEDGER_SLACK {
            return Err(Error::WindowOverflow {
                tick: t,
                spent,
                budget: self.epsilon,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationDecision {
    pub tick: u32,
    pub p_t: f64,
    /// Budget each reporter spends this tick (zero when nothing is collected).
    pub eps_t: f64,
    /// Reporting users, ascending.
    pub reporters: Vec<u32>,
    pub n_t: usize,
    pub deviation: f64,
    pub skipped: bool,
}

impl AllocationDecision {
    pub fn privacy(&self) -> Option<PrivacyParams> {
        (!self.skipped && self.eps_t > 0.0)
            .then(|| PrivacyParams::new(self.eps_t).ok())
            .flatten()
    }
}

/// Owns the ledger and registry and turns the strategy into per-tick
/// decisions.
#[derive(Debug, Clone)]
pub struct Allocator {
    params: AllocationParams,
    epsilon: f64,
    w: usize,
    ledger: WindowLedger,
    registry: UserRegistry,
    first_tick: Option<u32>,
    idle_ticks: usize,
}

impl Allocator {
    pub fn new(epsilon: PrivacyParams, w: usize, params: AllocationParams) -> Result<Self> {
        params.validate()?;
        if w == 0 {
            return Err(Error::invalid("w", "window must be >= 1"));
        }
        Ok(Self {
            params,
            epsilon: epsilon.epsilon(),
            w,
            ledger: WindowLedger::new(w, epsilon.epsilon()),
            registry: UserRegistry::new(w),
            first_tick: None,
            idle_ticks: 0,
        })
    }

    pub fn params(&self) -> &AllocationParams {
        &self.params
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn ledger(&self) -> &WindowLedger {
        &self.ledger
    }

    pub fn registry(&self) -> &UserRegistry {
        &self.registry
    }

    pub fn registry_mut(&mut self) -> &mut UserRegistry {
        &mut self.registry
    }

    /// Portion for this tick before it is turned into a budget or a sample.
    fn target_portion(&self, tau: u32, model: &GlobalMobilityModel) -> (f64, f64) {
        let w = self.w as f64;
        match self.params.strategy {
            Strategy::Uniform => (1.0 / w, 0.0),
            Strategy::Sample => {
                let p = if (tau as usize - 1).is_multiple_of(self.w) {
                    1.0
                } else {
                    0.0
                };
                (p, 0.0)
            }
            Strategy::Adaptive => {
                let dev = deviation(model, self.params.kappa);
                // the first tick initializes with 1/w; until two model vectors
                // exist, or after a full idle window, fall back to the same
                if tau == 1 || model.history().len() < 2 || self.idle_ticks >= self.w {
                    return ((1.0 / w).min(self.params.p_max), dev);
                }
                let ratios: Vec<f64> = model.sig_ratio_history().iter().copied().collect();
                (portion(dev, &ratios, self.w, &self.params), dev)
            }
        }
    }

    pub fn decide<R: Rng + ?Sized>(
        &mut self,
        t: u32,
        model: &GlobalMobilityModel,
        rng: &mut R,
    ) -> Result<AllocationDecision> {
        let first = *self.first_tick.get_or_insert(t);
        let tau = t - first + 1;
        let (p_t, dev) = self.target_portion(tau, model);

        let (eps_t, reporters) = match self.params.division {
            Division::Budget => {
                let eps_t = match self.params.strategy {
                    Strategy::Uniform => self.epsilon / self.w as f64,
                    Strategy::Sample => p_t * self.ledger.remaining(),
                    Strategy::Adaptive => {
                        let e = p_t * self.ledger.remaining();
                        if e < self.params.budget_floor {
                            0.0
                        } else {
                            e
                        }
                    }
                };
                let reporters = if eps_t > 0.0 {
                    self.registry.present_users()
                } else {
                    Vec::new()
                };
                self.ledger
                    .record(t, if reporters.is_empty() { 0.0 } else { eps_t })?;
                (eps_t, reporters)
            }
            Division::Population => {
                let active = self.registry.active_users();
                let size = ((p_t * active.len() as f64).floor() as usize).min(active.len());
                let mut reporters: Vec<u32> = if size == active.len() {
                    active
                } else {
                    sample(rng, active.len(), size)
                        .into_iter()
                        .map(|i| active[i])
                        .collect()
                };
                reporters.sort_unstable();
                self.registry.mark_reported(&reporters, t)?;
                (self.epsilon, reporters)
            }
        };

        let skipped = reporters.is_empty();
        self.idle_ticks = if skipped { self.idle_ticks + 1 } else { 0 };
        Ok(AllocationDecision {
            tick: t,
            p_t,
            eps_t: if skipped { 0.0 } else { eps_t },
            n_t: reporters.len(),
            reporters,
            deviation: dev,
            skipped,
        })
    }
}

/// One line of the allocation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationRecord {
    pub tick: u32,
    pub strategy: Strategy,
    pub division: Division,
    pub p_t: f64,
    pub eps_t: f64,
    pub sample_size: usize,
    pub active_users: usize,
    pub present_users: usize,
    pub window_spent: f64,
    pub deviation: f64,
    pub significant: Option<usize>,
    pub skipped: bool,
}
