//! Exact simulation of the occupancy Markov process.
//!
//! One clock of rate `lambda(N) + R`, with `R` the total departure rate; each
//! step draws, in this order, the inter-event time, the arrival/departure coin,
//! and then either the policy's selection draws or the departing level.

use std::collections::HashMap;

use rand::Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::{Buffer, OccupancyState, SystemParams};
use crate::policies::{Assignment, Policy, PolicySpec};
use crate::rng::{exponential, seeded, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// An arrival joined a pool that held `size` tasks (so `Q_{size+1}` grew).
    Arrival { rank: usize, size: usize },
    /// An arrival was routed to a full pool and discarded.
    Overflow { rank: usize },
    /// A pool holding `size` tasks completed one (so `Q_size` shrank).
    Departure { size: usize },
}

impl EventKind {
    /// The occupancy level whose count changed (the buffer level for overflows).
    pub fn level(&self, buffer: Buffer) -> usize {
        match *self {
            EventKind::Arrival { size, .. } => size + 1,
            EventKind::Overflow { .. } => buffer.capacity().unwrap_or(0),
            EventKind::Departure { size } => size,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            EventKind::Arrival { .. } => "arrival",
            EventKind::Overflow { .. } => "overflow",
            EventKind::Departure { .. } => "departure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

pub(crate) fn apply(state: &mut OccupancyState, kind: EventKind) {
    match kind {
        EventKind::Arrival { size, .. } => state.add_task(size),
        EventKind::Overflow { .. } => {}
        EventKind::Departure { size } => state.remove_task(size),
    }
}

/// Picks the departing level with probability `mu_i / R` from a uniform `u` in [0, 1).
pub(crate) fn departure_level(state: &OccupancyState, params: &SystemParams, u: f64) -> usize {
    let total = state.total_departure_rate(params.service);
    let target = u * total;
    let mut acc = 0.0;
    let levels = state.levels();
    for i in 1..=levels {
        let rate = params.service.level_rate(i, state.pools_with_exactly(i) as f64);
        acc += rate;
        if target < acc {
            return i;
        }
    }
    // rounding at the top end: the highest level with positive rate
    (1..=levels)
        .rev()
        .find(|&i| state.pools_with_exactly(i) > 0)
        .expect("departure drawn from an empty system")
}

/// A running single-system simulation.
#[derive(Debug, Clone)]
pub struct Simulation {
    params: SystemParams,
    policy: Policy,
    state: OccupancyState,
    rng: SimRng,
    time: f64,
    arrivals: u64,
    overflows: u64,
    events: u64,
}

impl Simulation {
    pub fn new(params: SystemParams, policy: Policy, initial: OccupancyState, seed: u64) -> Result<Self> {
        check_compatible(&params, &initial)?;
        policy.validate(params.pools)?;
        Ok(Simulation {
            params,
            policy,
            state: initial,
            rng: seeded(seed),
            time: 0.0,
            arrivals: 0,
            overflows: 0,
            events: 0,
        })
    }

    pub fn state(&self) -> &OccupancyState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn arrivals(&self) -> u64 {
        self.arrivals
    }

    pub fn overflows(&self) -> u64 {
        self.overflows
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    /// Time of the next event, drawn but not yet applied.
    fn draw_next(&mut self) -> (f64, f64) {
        let departure_rate = self.state.total_departure_rate(self.params.service);
        let total = self.params.arrival_rate + departure_rate;
        let dt = exponential(&mut self.rng, total);
        (self.time + dt, total)
    }

    fn apply_next(&mut self, time: f64, total: f64) -> Event {
        let coin: f64 = self.rng.random();
        let kind = if coin * total < self.params.arrival_rate {
            self.arrivals += 1;
            match self.policy.select(&self.state, &mut self.rng) {
                Assignment::Join { rank, size } => EventKind::Arrival { rank, size },
                Assignment::Overflow { rank } => {
                    self.overflows += 1;
                    EventKind::Overflow { rank }
                }
            }
        } else {
            let u: f64 = self.rng.random();
            EventKind::Departure {
                size: departure_level(&self.state, &self.params, u),
            }
        };
        apply(&mut self.state, kind);
        debug_assert!(self.state.check_invariants().is_ok());
        self.time = time;
        self.events += 1;
        Event { time, kind }
    }

    /// Advances by one event.
    pub fn step(&mut self) -> Event {
        let (time, total) = self.draw_next();
        self.apply_next(time, total)
    }

    /// Advances by one event unless it would fall after `horizon`, in which
    /// case the clock stops at `horizon` and `None` is returned. Stopping is
    /// final: by memorylessness, resuming past `horizon` is still exact.
    pub fn step_until(&mut self, horizon: f64) -> Option<Event> {
        let (time, total) = self.draw_next();
        if time > horizon {
            self.time = self.time.max(horizon);
            return None;
        }
        Some(self.apply_next(time, total))
    }
}

fn check_compatible(params: &SystemParams, state: &OccupancyState) -> Result<()> {
    if state.pools() != params.pools || state.buffer() != params.buffer {
        return Err(Error::InvalidState(format!(
            "initial state ({} pools, buffer {}) does not match parameters ({} pools, buffer {})",
            state.pools(),
            state.buffer(),
            params.pools,
            params.buffer
        )));
    }
    state.check_invariants()
}

/// A recorded sample path.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub params: SystemParams,
    pub policy: Policy,
    pub seed: u64,
    pub horizon: f64,
    pub initial: OccupancyState,
    pub events: Vec<Event>,
    pub arrivals: u64,
    pub overflows: u64,
}

impl Trajectory {
    /// Calls `visit(time, event, state_after)` for every event in order.
    pub fn replay(&self, mut visit: impl FnMut(f64, Option<&Event>, &OccupancyState)) {
        let mut state = self.initial.clone();
        visit(0.0, None, &state);
        for ev in &self.events {
            apply(&mut state, ev.kind);
            visit(ev.time, Some(ev), &state);
        }
    }

    pub fn final_state(&self) -> OccupancyState {
        let mut state = self.initial.clone();
        for ev in &self.events {
            apply(&mut state, ev.kind);
        }
        state
    }

    /// Highest level ever occupied along the path (at least the buffer when finite).
    pub fn max_level(&self) -> usize {
        let mut top = self.initial.levels();
        self.replay(|_, _, s| top = top.max(s.levels()));
        top
    }
}

/// Simulates the process on `[0, horizon]` and records every event.
pub fn simulate(
    params: &SystemParams,
    policy: &PolicySpec,
    horizon: f64,
    initial: &OccupancyState,
    seed: u64,
) -> Result<Trajectory> {
    let policy = policy.resolve(params.pools)?;
    let mut sim = Simulation::new(*params, policy, initial.clone(), seed)?;
    let mut events = Vec::new();
    if horizon > 0.0 {
        while let Some(ev) = sim.step_until(horizon) {
            events.push(ev);
        }
    }
    Ok(Trajectory {
        params: *params,
        policy,
        seed,
        horizon: horizon.max(0.0),
        initial: initial.clone(),
        events,
        arrivals: sim.arrivals,
        overflows: sim.overflows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateOptions {
    pub run_time: f64,
    pub warmup_fraction: f64,
    pub n_batches: usize,
    /// Starting state; the empty system when `None`.
    pub initial: Option<OccupancyState>,
}

impl SteadyStateOptions {
    pub fn new(run_time: f64) -> Self {
        SteadyStateOptions {
            run_time,
            ..Default::default()
        }
    }
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        SteadyStateOptions {
            run_time: 100.0,
            warmup_fraction: 0.2,
            n_batches: 20,
            initial: None,
        }
    }
}

/// Shortest admissible batch, in mean service times.
pub const MIN_BATCH_LENGTH: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateReport {
    /// Time-averaged `q_i`, level `i` at index `i - 1`.
    pub q_hat: Vec<f64>,
    /// 95% batch-means half-widths for `q_hat`.
    pub ci_half: Vec<f64>,
    /// Overflows over arrivals in the observation window.
    pub loss: f64,
    pub loss_ci_half: f64,
    pub arrivals: u64,
    pub overflows: u64,
    /// Observed departures per unit time out of each level.
    pub departure_rates: Vec<f64>,
    pub departure_rate_ci_half: Vec<f64>,
    pub window: (f64, f64),
    pub warmup_fraction: f64,
    pub n_batches: usize,
    pub events: u64,
}

fn mean_and_half_width(samples: &[f64], t_quantile: f64) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, t_quantile * (var / n).sqrt())
}

/// Two-sided 95% Student-t quantile with `dof` degrees of freedom.
pub fn t_quantile_95(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

#[derive(Debug, Default, Clone)]
struct Batch {
    area: Vec<f64>,
    arrivals: u64,
    overflows: u64,
    departures: Vec<u64>,
}

impl Batch {
    fn grow(&mut self, levels: usize) {
        if self.area.len() < levels {
            self.area.resize(levels, 0.0);
            self.departures.resize(levels, 0);
        }
    }
}

/// Time-averaged occupancy with batch-means confidence intervals.
pub fn steady_state(
    params: &SystemParams,
    policy: &PolicySpec,
    opts: &SteadyStateOptions,
    seed: u64,
) -> Result<SteadyStateReport> {
    if opts.n_batches < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 batches, got {}", opts.n_batches)));
    }
    if !(0.0..1.0).contains(&opts.warmup_fraction) {
        return Err(Error::InvalidParameter(format!(
            "warm-up fraction {} outside [0, 1)",
            opts.warmup_fraction
        )));
    }
    let start = opts.run_time * opts.warmup_fraction;
    let batch_len = (opts.run_time - start) / opts.n_batches as f64;
    if !(batch_len >= MIN_BATCH_LENGTH) {
        return Err(Error::InvalidParameter(format!(
            "run time {} too short for {} batches after warm-up (batch length {batch_len} < {MIN_BATCH_LENGTH})",
            opts.run_time, opts.n_batches
        )));
    }
    let initial = match &opts.initial {
        Some(s) => s.clone(),
        None => OccupancyState::empty(params.pools, params.buffer)?,
    };
    let policy = policy.resolve(params.pools)?;
    let mut sim = Simulation::new(*params, policy, initial, seed)?;
    let mut batches = vec![Batch::default(); opts.n_batches];
    let batch_of = |t: f64| (((t - start) / batch_len) as usize).min(opts.n_batches - 1);

    // warm-up
    while sim.step_until(start).is_some() {}
    let mut t_prev = start;
    let end = opts.run_time;
    loop {
        let before = sim.state().clone();
        let next = sim.step_until(end);
        let t_next = next.map_or(end, |e| e.time);
        // credit the state held on [t_prev, t_next) to the batches it spans
        let mut a = t_prev;
        let mut b_idx = batch_of(a);
        while a < t_next {
            let b_end = if b_idx == opts.n_batches - 1 {
                t_next
            } else {
                (start + (b_idx + 1) as f64 * batch_len).min(t_next)
            };
            let batch = &mut batches[b_idx];
            batch.grow(before.levels());
            for (i, &q) in before.counts().iter().enumerate() {
                batch.area[i] += q as f64 * (b_end - a).max(0.0);
            }
            a = b_end;
            b_idx += 1;
        }
        let Some(ev) = next else { break };
        let batch = &mut batches[batch_of(ev.time)];
        match ev.kind {
            EventKind::Arrival { size, .. } => {
                batch.arrivals += 1;
                batch.grow(size + 1);
            }
            EventKind::Overflow { .. } => {
                batch.arrivals += 1;
                batch.overflows += 1;
            }
            EventKind::Departure { size } => {
                batch.grow(size);
                batch.departures[size - 1] += 1;
            }
        }
        t_prev = ev.time;
    }

    let levels = batches.iter().map(|b| b.area.len()).max().unwrap_or(0).max(params.buffer.capacity().unwrap_or(0));
    for b in &mut batches {
        b.grow(levels);
    }
    let tq = t_quantile_95(opts.n_batches - 1);
    let n = params.pools as f64;
    let mut q_hat = Vec::with_capacity(levels);
    let mut ci_half = Vec::with_capacity(levels);
    let mut departure_rates = Vec::with_capacity(levels);
    let mut departure_rate_ci_half = Vec::with_capacity(levels);
    for i in 0..levels {
        let samples: Vec<f64> = batches.iter().map(|b| b.area[i] / (batch_len * n)).collect();
        let (m, h) = mean_and_half_width(&samples, tq);
        q_hat.push(m);
        ci_half.push(h);
        let rates: Vec<f64> = batches.iter().map(|b| b.departures[i] as f64 / batch_len).collect();
        let (m, h) = mean_and_half_width(&rates, tq);
        departure_rates.push(m);
        departure_rate_ci_half.push(h);
    }
    let arrivals: u64 = batches.iter().map(|b| b.arrivals).sum();
    let overflows: u64 = batches.iter().map(|b| b.overflows).sum();
    let loss = if arrivals > 0 { overflows as f64 / arrivals as f64 } else { 0.0 };
    let batch_losses: Vec<f64> = batches
        .iter()
        .map(|b| if b.arrivals > 0 { b.overflows as f64 / b.arrivals as f64 } else { 0.0 })
        .collect();
    let (_, loss_ci_half) = mean_and_half_width(&batch_losses, tq);
    Ok(SteadyStateReport {
        q_hat,
        ci_half,
        loss,
        loss_ci_half,
        arrivals,
        overflows,
        departure_rates,
        departure_rate_ci_half,
        window: (start, end),
        warmup_fraction: opts.warmup_fraction,
        n_batches: opts.n_batches,
        events: sim.events(),
    })
}

/// Time-weighted empirical distribution over occupancy states, collected over
/// `events` events after discarding `warmup_events`.
pub fn empirical_state_distribution(
    sim: &mut Simulation,
    warmup_events: u64,
    events: u64,
) -> HashMap<OccupancyState, f64> {
    for _ in 0..warmup_events {
        sim.step();
    }
    let mut occupancy: HashMap<OccupancyState, f64> = HashMap::new();
    let t0 = sim.time();
    let mut t_prev = t0;
    for _ in 0..events {
        let before = sim.state().clone();
        let ev = sim.step();
        *occupancy.entry(before).or_insert(0.0) += ev.time - t_prev;
        t_prev = ev.time;
    }
    let total = t_prev - t0;
    for v in occupancy.values_mut() {
        *v /= total;
    }
    occupancy
}
