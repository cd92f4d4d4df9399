//! The curator's tick loop over a discretized stream set.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Variant};
use super::ingest::StreamSet;
use crate::allocation::{AllocationDecision, AllocationRecord, Allocator};
use crate::client::{report, UserStream};
use crate::error::{Error, Result};
use crate::eval::{CellTrajectory, TrajectorySet};
use crate::grid::{TransitionDomain, TransitionState};
use crate::mobility::{GlobalMobilityModel, SignificantSet};
use crate::oracle::{Aggregator, PrivacyParams};
use crate::synth::{SynthParams, SyntheticDatabase};

/// Deterministic per-tick counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickStats {
    pub tick: u32,
    pub real_active: usize,
    pub synthetic_active: usize,
    pub reporters: usize,
    pub eps_t: f64,
    pub significant: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TickOutcome {
    pub stats: TickStats,
    pub record: AllocationRecord,
    pub decision: AllocationDecision,
    pub seconds: f64,
}

struct LiveStream {
    index: usize,
    client: UserStream,
}

pub struct Simulation<'a> {
    streams: &'a StreamSet,
    variant: Variant,
    dom: Arc<TransitionDomain>,
    model: GlobalMobilityModel,
    model_ready: bool,
    allocator: Allocator,
    synth: SyntheticDatabase,
    synth_params: SynthParams,
    alloc_rng: ChaCha8Rng,
    synth_rng: ChaCha8Rng,
    report_key: [u8; 32],
    next_tick: u32,
    next_stream: usize,
    live: Vec<LiveStream>,
    live_per_person: Vec<u32>,
    // per-person state of the current tick, and the start tick of its stream
    states: Vec<Option<(u32, TransitionState)>>,
}

impl<'a> Simulation<'a> {
    pub fn new(cfg: &RunConfig, streams: &'a StreamSet) -> Result<Self> {
        cfg.validate()?;
        let epsilon = PrivacyParams::new(cfg.epsilon)?;
        let dom = Arc::new(TransitionDomain::build(streams.grid));
        let lambda = cfg.synth.lambda.unwrap_or_else(|| streams.average_length());
        let mut seeder = ChaCha8Rng::seed_from_u64(cfg.seed);
        let report_key: [u8; 32] = seeder.gen();
        let stream_rng = |stream: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
            r.set_stream(stream);
            r
        };
        Ok(Self {
            streams,
            variant: cfg.variant,
            model: GlobalMobilityModel::new(Arc::clone(&dom), cfg.allocation.kappa),
            dom,
            model_ready: false,
            allocator: Allocator::new(epsilon, cfg.w, cfg.allocation)?,
            synth: SyntheticDatabase::new(),
            synth_params: SynthParams::new(lambda)?,
            alloc_rng: stream_rng(1),
            synth_rng: stream_rng(2),
            report_key,
            next_tick: streams.first_tick,
            next_stream: 0,
            live: Vec::new(),
            live_per_person: vec![0; streams.users.len()],
            states: vec![None; streams.users.len()],
        })
    }

    pub fn model(&self) -> &GlobalMobilityModel {
        &self.model
    }

    pub fn synthetic(&self) -> &SyntheticDatabase {
        &self.synth
    }

    pub fn allocator(&self) -> &Allocator {
        &self.allocator
    }

    pub fn synth_params(&self) -> SynthParams {
        self.synth_params
    }

    pub fn is_finished(&self) -> bool {
        self.next_tick > self.streams.last_tick
    }

    /// Runs one tick; `None` once the stream set is exhausted.
    pub fn step(&mut self) -> Result<Option<TickOutcome>> {
        if self.is_finished() {
            return Ok(None);
        }
        let t = self.next_tick;
        let started = Instant::now();
        let outcome = self.tick(t).map_err(|e| e.at_tick(t))?;
        self.next_tick += 1;
        Ok(Some(TickOutcome {
            seconds: started.elapsed().as_secs_f64(),
            ..outcome
        }))
    }

    fn tick(&mut self, t: u32) -> Result<TickOutcome> {
        // arrivals
        while let Some(s) = self
            .streams
            .streams
            .get(self.next_stream)
            .filter(|s| s.start == t)
        {
            let person = s.person as usize;
            if self.live_per_person[person] == 0 {
                self.allocator.registry_mut().arrive(s.person, t);
            }
            self.live_per_person[person] += 1;
            self.live.push(LiveStream {
                index: self.next_stream,
                client: UserStream::new(self.streams.users[person].clone()),
            });
            self.next_stream += 1;
        }
        self.allocator.registry_mut().recycle(t);
        let decision = self.allocator.decide(t, &self.model, &mut self.alloc_rng)?;

        // client-side observation; a person with two streams at this tick
        // (a jump split) reports the newer one
        let mut real_active = 0;
        let mut quitting = Vec::new();
        for (pos, ls) in self.live.iter_mut().enumerate() {
            let s = &self.streams.streams[ls.index];
            let cell = s.cell_at(t);
            let state = ls.client.observe_cell(t, cell)?;
            match state {
                TransitionState::Quit { .. } => quitting.push(pos),
                _ => real_active += 1,
            }
            let slot = &mut self.states[s.person as usize];
            if slot.is_none_or(|(start, _)| s.start >= start) {
                *slot = Some((s.start, state));
            }
        }

        let eps = decision.privacy();
        let mut significant = None;
        if let (Some(eps), false) = (eps, decision.skipped) {
            let fresh = self.collect(t, &decision.reporters, eps)?.finish(eps);
            if !self.model_ready {
                self.model.initialize(&fresh)?;
                self.model_ready = true;
                significant = Some(self.dom.len());
            } else {
                let sig = self.model.select_significant(&fresh, eps, decision.n_t)?;
                self.model.record_sig_ratio(sig.ratio());
                significant = Some(sig.count());
                let applied = match self.variant {
                    Variant::AllUpdate => SignificantSet::all(self.dom.len()),
                    _ => sig,
                };
                self.model.apply_update(&fresh, &applied)?;
            }
        }
        for ls in &self.live {
            self.states[self.streams.streams[ls.index].person as usize] = None;
        }

        let with_eq = self.variant != Variant::NoEq;
        let snapshot = self.model.snapshot(with_eq);
        if t == self.streams.first_tick {
            self.synth
                .initialize(real_active, &snapshot, t, &mut self.synth_rng);
        } else {
            self.synth
                .step(&snapshot, &self.synth_params, &mut self.synth_rng);
            if with_eq {
                self.synth
                    .adjust_size(real_active, &snapshot, t, &mut self.synth_rng);
            }
        }

        for &pos in quitting.iter().rev() {
            let ls = self.live.swap_remove(pos);
            let person = self.streams.streams[ls.index].person;
            self.live_per_person[person as usize] -= 1;
            if self.live_per_person[person as usize] == 0 {
                self.allocator.registry_mut().depart(person);
            }
        }

        let synthetic_active = self.synth.active_count();
        if with_eq && synthetic_active != real_active {
            return Err(Error::invalid(
                "synthetic size",
                format!(
                    "{synthetic_active} active synthetic trajectories for {real_active} real ones"
                ),
            ));
        }
        let registry = self.allocator.registry();
        let record = AllocationRecord {
            tick: t,
            strategy: self.allocator.params().strategy,
            division: self.allocator.params().division,
            p_t: decision.p_t,
            eps_t: decision.eps_t,
            sample_size: decision.n_t,
            active_users: registry.active_users().len(),
            present_users: registry.present_users().len(),
            window_spent: self.allocator.ledger().window_sum(),
            deviation: decision.deviation,
            significant,
            skipped: decision.skipped,
        };
        Ok(TickOutcome {
            stats: TickStats {
                tick: t,
                real_active,
                synthetic_active,
                reporters: decision.n_t,
                eps_t: decision.eps_t,
                significant,
            },
            record,
            decision,
            seconds: 0.0,
        })
    }

    /// Perturbs and aggregates the reporters' states in parallel. Each person
    /// draws from its own ChaCha stream positioned by tick, so the result is
    /// independent of scheduling.
    fn collect(&self, t: u32, reporters: &[u32], eps: PrivacyParams) -> Result<Aggregator> {
        let size = self.dom.len();
        reporters
            .par_iter()
            .try_fold(
                || Aggregator::new(size),
                |mut agg, &p| {
                    let (_, state) = self.states[p as usize].ok_or_else(|| {
                        Error::invalid("reporter", format!("user {p} has no state at tick {t}"))
                    })?;
                    let mut rng = ChaCha8Rng::from_seed(self.report_key);
                    rng.set_stream(p as u64);
                    rng.set_word_pos((t as u128) << 40);
                    let r = report(p, t, state, &self.dom, eps, &mut rng)?;
                    agg.add(&r.payload)?;
                    Ok(agg)
                },
            )
            .try_reduce(|| Aggregator::new(size), |a, b| a.merge(b))
    }

    pub fn synthetic_trajectories(&self) -> TrajectorySet {
        TrajectorySet {
            grid: self.streams.grid,
            first_tick: self.streams.first_tick,
            last_tick: self.streams.last_tick,
            trajectories: self
                .synth
                .trajectories()
                .iter()
                .map(|tr| CellTrajectory {
                    start: tr.start,
                    cells: tr.cells.clone(),
                })
                .collect(),
        }
    }
}
