//! Two policies driven on one probability space: synchronized arrivals, one
//! departure clock of rate `M = max(Y_A, Y_B)`, and green/blue/red task
//! indices deciding which departures are shared.
//!
//! A task index is `(rank, position)`: the `position`-th task of the pool at
//! ordered `rank`. Level `j` of a system is occupied exactly at the top `Q_j`
//! ranks, so the indices green (in both), blue (only in A) and red (only in B)
//! at level `j` form rank intervals and everything is computed from the
//! occupancy counts.

use std::collections::HashMap;

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::model::{OccupancyState, ServiceMode, SystemParams};
use crate::policies::{Assignment, Policy, PolicySpec};
use crate::rng::{exponential, seeded, SimRng};

/// Per-level color counts of two superposed states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coloring {
    pub green: Vec<usize>,
    pub blue: Vec<usize>,
    pub red: Vec<usize>,
}

impl Coloring {
    /// `H`, the number of shared indices.
    pub fn shared(&self) -> usize {
        self.green.iter().sum()
    }

    pub fn blue_total(&self) -> usize {
        self.blue.iter().sum()
    }

    pub fn red_total(&self) -> usize {
        self.red.iter().sum()
    }
}

fn check_pair(a: &OccupancyState, b: &OccupancyState) -> Result<()> {
    if a.pools() != b.pools() || a.buffer() != b.buffer() {
        return Err(Error::InvalidState(format!(
            "coupled states differ in shape: ({}, {}) vs ({}, {})",
            a.pools(),
            a.buffer(),
            b.pools(),
            b.buffer()
        )));
    }
    Ok(())
}

pub fn coloring(a: &OccupancyState, b: &OccupancyState) -> Result<Coloring> {
    check_pair(a, b)?;
    let levels = a.levels().max(b.levels());
    let mut c = Coloring {
        green: Vec::with_capacity(levels),
        blue: Vec::with_capacity(levels),
        red: Vec::with_capacity(levels),
    };
    for i in 1..=levels {
        let (qa, qb) = (a.level(i), b.level(i));
        c.green.push(qa.min(qb));
        c.blue.push(qa.saturating_sub(qb));
        c.red.push(qb.saturating_sub(qa));
    }
    Ok(c)
}

/// `sum_i |Q_i^A - Q_i^B|`.
pub fn sum_abs_diff(a: &OccupancyState, b: &OccupancyState) -> usize {
    let levels = a.levels().max(b.levels());
    (1..=levels).map(|i| a.level(i).abs_diff(b.level(i))).sum()
}

/// Total order used to rank colored indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IndexOrder {
    /// By pool rank, then position.
    #[default]
    RankMajor,
    /// By position (level), then pool rank.
    LevelMajor,
}

/// A task index: pool `rank` (1-based, nondecreasing load) and `position`
/// (1-based height within the pool).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskIndex {
    pub rank: usize,
    pub position: usize,
}

/// The `m`-th smallest (1-based) index present in `hi` but not in `lo`.
pub fn nth_exclusive_index(hi: &OccupancyState, lo: &OccupancyState, m: usize, order: IndexOrder) -> Option<TaskIndex> {
    let n = hi.pools();
    let levels = hi.levels();
    // rank interval (start, end] at each level
    let intervals: Vec<(usize, usize)> = (1..=levels)
        .map(|j| {
            let (h, l) = (hi.level(j), lo.level(j));
            if h > l {
                (n - h, n - l)
            } else {
                (0, 0)
            }
        })
        .collect();
    let total: usize = intervals.iter().map(|(s, e)| e - s).sum();
    if m == 0 || m > total {
        return None;
    }
    match order {
        IndexOrder::LevelMajor => {
            let mut left = m;
            for (j, &(s, e)) in intervals.iter().enumerate() {
                let len = e - s;
                if left <= len {
                    return Some(TaskIndex {
                        rank: s + left,
                        position: j + 1,
                    });
                }
                left -= len;
            }
            unreachable!("m within total")
        }
        IndexOrder::RankMajor => {
            let upto = |c: usize| -> usize { intervals.iter().map(|&(s, e)| c.clamp(s, e) - s).sum() };
            // smallest rank c with upto(c) >= m
            let (mut lo_c, mut hi_c) = (1usize, n);
            while lo_c < hi_c {
                let mid = (lo_c + hi_c) / 2;
                if upto(mid) >= m {
                    hi_c = mid;
                } else {
                    lo_c = mid + 1;
                }
            }
            let c = lo_c;
            let mut left = m - upto(c - 1);
            for (j, &(s, e)) in intervals.iter().enumerate() {
                if s < c && c <= e {
                    left -= 1;
                    if left == 0 {
                        return Some(TaskIndex { rank: c, position: j + 1 });
                    }
                }
            }
            unreachable!("rank c holds the remaining indices")
        }
    }
}

/// The `r`-th (0-based) shared index in level-major order.
pub fn nth_shared_index(a: &OccupancyState, b: &OccupancyState, r: usize) -> Option<TaskIndex> {
    let n = a.pools();
    let levels = a.levels().max(b.levels());
    let mut left = r;
    for j in 1..=levels {
        let g = a.level(j).min(b.level(j));
        if left < g {
            return Some(TaskIndex {
                rank: n - g + 1 + left,
                position: j,
            });
        }
        left -= g;
    }
    None
}

/// A coupled pair with the differ-in-decision counter.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CoupledState {
    pub a: OccupancyState,
    pub b: OccupancyState,
    pub delta: u64,
}

impl CoupledState {
    pub fn new(a: OccupancyState, b: OccupancyState) -> Result<Self> {
        check_pair(&a, &b)?;
        Ok(CoupledState { a, b, delta: 0 })
    }

    /// `M = max(Y_A, Y_B)`.
    pub fn clock_rate(&self) -> usize {
        self.a.total_tasks().max(self.b.total_tasks())
    }

    /// `H = sum_i min(Q_i^A, Q_i^B)`.
    pub fn shared(&self) -> usize {
        let levels = self.a.levels().max(self.b.levels());
        (1..=levels).map(|i| self.a.level(i).min(self.b.level(i))).sum()
    }

    pub fn sum_abs_diff(&self) -> usize {
        sum_abs_diff(&self.a, &self.b)
    }

    pub fn coloring(&self) -> Coloring {
        coloring(&self.a, &self.b).expect("pair shape checked on construction")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoupledKind {
    Arrival { a: Assignment, b: Assignment, differ: bool },
    /// Levels decremented in each system (`None` where nothing happened).
    Departure { green: bool, level_a: Option<usize>, level_b: Option<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledEvent {
    pub time: f64,
    pub kind: CoupledKind,
}

fn apply_assignment(state: &mut OccupancyState, assignment: Assignment) {
    if let Assignment::Join { size, .. } = assignment {
        state.add_task(size);
    }
}

/// Applies one arrival whose decisions are the given ranks.
pub fn coupled_arrival_at(state: &mut CoupledState, rank_a: usize, rank_b: usize) -> Result<CoupledKind> {
    let n = state.a.pools();
    for r in [rank_a, rank_b] {
        if r == 0 || r > n {
            return Err(crate::error::out_of_range("pool rank", r, format!("1..={n}")));
        }
    }
    let pick = |s: &OccupancyState, rank: usize| {
        let size = s.size_at_rank(rank);
        if s.buffer().admits(size) {
            Assignment::Join { rank, size }
        } else {
            Assignment::Overflow { rank }
        }
    };
    let a = pick(&state.a, rank_a);
    let b = pick(&state.b, rank_b);
    apply_assignment(&mut state.a, a);
    apply_assignment(&mut state.b, b);
    let differ = rank_a != rank_b;
    state.delta += u64::from(differ);
    Ok(CoupledKind::Arrival { a, b, differ })
}

/// Routes one arrival in both systems. Each policy draws from its own
/// generator seeded with `sub_seed`, so identical policies make identical
/// draws.
pub fn coupled_arrival(state: &mut CoupledState, policy_a: &Policy, policy_b: &Policy, sub_seed: u64) -> CoupledKind {
    let a = policy_a.select(&state.a, &mut seeded(sub_seed));
    let b = policy_b.select(&state.b, &mut seeded(sub_seed));
    apply_assignment(&mut state.a, a);
    apply_assignment(&mut state.b, b);
    let differ = a.rank() != b.rank();
    state.delta += u64::from(differ);
    CoupledKind::Arrival { a, b, differ }
}

/// One coupled departure from uniforms `u` (branch) and `aux` (index), both in
/// `[0, 1)`. Green: a uniform shared index `(rank, position)`; each system
/// loses a task from its pool at that rank. Colored: `m` uniform on
/// `1..=M-H`; each system loses its `m`-th smallest exclusive index, or
/// nothing when it has fewer than `m`.
pub fn coupled_departure(state: &mut CoupledState, u: f64, aux: f64, order: IndexOrder) -> Result<CoupledKind> {
    let m_rate = state.clock_rate();
    if m_rate == 0 {
        return Err(Error::InvalidState("departure requested from two empty systems".into()));
    }
    let h = state.shared();
    if u * (m_rate as f64) < h as f64 {
        let r = ((aux * h as f64) as usize).min(h - 1);
        let idx = nth_shared_index(&state.a, &state.b, r).expect("r < H");
        let la = state.a.size_at_rank(idx.rank);
        let lb = state.b.size_at_rank(idx.rank);
        state.a.remove_task(la);
        state.b.remove_task(lb);
        return Ok(CoupledKind::Departure {
            green: true,
            level_a: Some(la),
            level_b: Some(lb),
        });
    }
    let colored = m_rate - h;
    let m = ((aux * colored as f64) as usize).min(colored - 1) + 1;
    let ia = nth_exclusive_index(&state.a, &state.b, m, order);
    let ib = nth_exclusive_index(&state.b, &state.a, m, order);
    let la = ia.map(|i| state.a.size_at_rank(i.rank));
    let lb = ib.map(|i| state.b.size_at_rank(i.rank));
    if let Some(l) = la {
        state.a.remove_task(l);
    }
    if let Some(l) = lb {
        state.b.remove_task(l);
    }
    Ok(CoupledKind::Departure {
        green: false,
        level_a: la,
        level_b: lb,
    })
}

/// Pathwise checks accumulated over a coupled run.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingChecks {
    pub events: u64,
    /// `sum |Q^A - Q^B|` at the start; the bound checked is `<= initial + 2 delta`.
    pub initial_gap: usize,
    /// Largest `sum |diff| - initial - 2 delta` seen (never positive when the bound holds).
    pub max_two_delta_margin: i64,
    pub two_delta_violations: u64,
    /// Sloppiness `n` when A is JSQ, B stays in CJSQ(n) and both start equal.
    pub sandwich_n: Option<usize>,
    /// Largest `S^A_k - k n - S^B_k` over `k` and time.
    pub max_lower_margin: i64,
    /// Largest `S^B_k - S^A_k` over `k` and time.
    pub max_upper_margin: i64,
    pub sandwich_violations: u64,
    /// Events with some `|Q_k^A - Q_k^B| > k n`.
    pub pointwise_violations: u64,
    pub max_abs_diff: Vec<usize>,
    pub max_sum_abs_diff: usize,
    pub delta: u64,
    pub arrivals: u64,
    pub differ_count: u64,
    pub overflows: (u64, u64),
}

impl CouplingChecks {
    fn new(state: &CoupledState, sandwich_n: Option<usize>) -> Self {
        let mut c = CouplingChecks {
            events: 0,
            initial_gap: state.sum_abs_diff(),
            max_two_delta_margin: i64::MIN,
            two_delta_violations: 0,
            sandwich_n,
            max_lower_margin: i64::MIN,
            max_upper_margin: i64::MIN,
            sandwich_violations: 0,
            pointwise_violations: 0,
            max_abs_diff: Vec::new(),
            max_sum_abs_diff: 0,
            delta: 0,
            arrivals: 0,
            differ_count: 0,
            overflows: (0, 0),
        };
        c.observe(state);
        c
    }

    fn observe(&mut self, state: &CoupledState) {
        let (a, b) = (&state.a, &state.b);
        let levels = a.levels().max(b.levels());
        if self.max_abs_diff.len() < levels {
            self.max_abs_diff.resize(levels, 0);
        }
        let mut sum = 0usize;
        for i in 1..=levels {
            let d = a.level(i).abs_diff(b.level(i));
            sum += d;
            self.max_abs_diff[i - 1] = self.max_abs_diff[i - 1].max(d);
        }
        self.max_sum_abs_diff = self.max_sum_abs_diff.max(sum);
        let margin = sum as i64 - self.initial_gap as i64 - 2 * state.delta as i64;
        self.max_two_delta_margin = self.max_two_delta_margin.max(margin);
        if margin > 0 {
            self.two_delta_violations += 1;
        }
        self.delta = state.delta;
        if let Some(n) = self.sandwich_n {
            let (mut sa, mut sb) = (0i64, 0i64);
            let mut bad = false;
            let mut bad_point = false;
            for k in 1..=levels {
                sa += a.level(k) as i64;
                sb += b.level(k) as i64;
                let kn = (k * n) as i64;
                let lower = sa - kn - sb;
                let upper = sb - sa;
                self.max_lower_margin = self.max_lower_margin.max(lower);
                self.max_upper_margin = self.max_upper_margin.max(upper);
                bad |= lower > 0 || upper > 0;
                bad_point |= a.level(k).abs_diff(b.level(k)) as i64 > kn;
            }
            self.sandwich_violations += u64::from(bad);
            self.pointwise_violations += u64::from(bad_point);
        }
    }

    /// Whether every checked inequality held on every event.
    pub fn all_hold(&self) -> bool {
        self.two_delta_violations == 0 && self.sandwich_violations == 0 && self.pointwise_violations == 0
    }

    /// Per-level `sup_t |Q_i^A - Q_i^B| / g` and `sup_t sum_i |...| / g`.
    pub fn gap(&self, g: f64) -> Result<AlikenessMetric> {
        if !(g > 0.0) {
            return Err(Error::InvalidParameter(format!("scale g must be positive, got {g}")));
        }
        Ok(AlikenessMetric {
            g,
            per_level: self.max_abs_diff.iter().map(|&d| d as f64 / g).collect(),
            summed: self.max_sum_abs_diff as f64 / g,
            two_delta_ok: self.two_delta_violations == 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlikenessMetric {
    pub g: f64,
    pub per_level: Vec<f64>,
    pub summed: f64,
    pub two_delta_ok: bool,
}

/// A running coupled simulation. Per event the draws are: event time, type
/// coin, then either one 64-bit arrival sub-seed or the departure pair
/// `(u, aux)`.
#[derive(Debug, Clone)]
pub struct CoupledSimulation {
    params: SystemParams,
    policy_a: Policy,
    policy_b: Policy,
    order: IndexOrder,
    state: CoupledState,
    rng: SimRng,
    time: f64,
    checks: CouplingChecks,
}

impl CoupledSimulation {
    pub fn new(
        params: SystemParams,
        policy_a: Policy,
        policy_b: Policy,
        a0: OccupancyState,
        b0: OccupancyState,
        seed: u64,
    ) -> Result<Self> {
        if params.service != ServiceMode::InfiniteServer {
            return Err(Error::InvalidParameter(
                "the coupling is defined for infinite-server pools only".into(),
            ));
        }
        for s in [&a0, &b0] {
            if s.pools() != params.pools || s.buffer() != params.buffer {
                return Err(Error::InvalidState("initial state does not match parameters".into()));
            }
            s.check_invariants()?;
        }
        policy_a.validate(params.pools)?;
        policy_b.validate(params.pools)?;
        let state = CoupledState::new(a0, b0)?;
        let sandwich_n = match (policy_a, policy_b.cjsq_sloppiness()) {
            (Policy::Jsq, Some(n)) if state.a == state.b => Some(n),
            _ => None,
        };
        let checks = CouplingChecks::new(&state, sandwich_n);
        Ok(CoupledSimulation {
            params,
            policy_a,
            policy_b,
            order: IndexOrder::default(),
            state,
            rng: seeded(seed),
            time: 0.0,
            checks,
        })
    }

    pub fn with_order(mut self, order: IndexOrder) -> Self {
        self.order = order;
        self
    }

    pub fn state(&self) -> &CoupledState {
        &self.state
    }

    pub fn checks(&self) -> &CouplingChecks {
        &self.checks
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn step_until(&mut self, horizon: f64) -> Option<CoupledEvent> {
        let m = self.state.clock_rate() as f64;
        let total = self.params.arrival_rate + m;
        let t = self.time + exponential(&mut self.rng, total);
        if t > horizon {
            self.time = self.time.max(horizon);
            return None;
        }
        let coin: f64 = self.rng.random();
        let kind = if coin * total < self.params.arrival_rate {
            let sub = self.rng.next_u64();
            let kind = coupled_arrival(&mut self.state, &self.policy_a, &self.policy_b, sub);
            if let CoupledKind::Arrival { a, b, differ } = kind {
                self.checks.arrivals += 1;
                self.checks.differ_count += u64::from(differ);
                self.checks.overflows.0 += u64::from(a.is_overflow());
                self.checks.overflows.1 += u64::from(b.is_overflow());
            }
            kind
        } else {
            let u: f64 = self.rng.random();
            let aux: f64 = self.rng.random();
            coupled_departure(&mut self.state, u, aux, self.order).expect("clock rate is positive")
        };
        debug_assert!(self.state.a.check_invariants().is_ok() && self.state.b.check_invariants().is_ok());
        self.time = t;
        self.checks.events += 1;
        self.checks.observe(&self.state);
        Some(CoupledEvent { time: t, kind })
    }

    /// Runs to `horizon` discarding events.
    pub fn run(&mut self, horizon: f64) -> &CouplingChecks {
        while self.step_until(horizon).is_some() {}
        &self.checks
    }

    /// Runs until `events` more events have happened.
    pub fn run_events(&mut self, events: u64) -> &CouplingChecks {
        let target = self.checks.events + events;
        while self.checks.events < target {
            self.step_until(f64::INFINITY);
        }
        &self.checks
    }
}

/// Time-weighted empirical laws of each side over `events` events after
/// `warmup_events`.
pub fn coupled_state_distributions(
    sim: &mut CoupledSimulation,
    warmup_events: u64,
    events: u64,
) -> (HashMap<OccupancyState, f64>, HashMap<OccupancyState, f64>) {
    sim.run_events(warmup_events);
    let mut a: HashMap<OccupancyState, f64> = HashMap::new();
    let mut b: HashMap<OccupancyState, f64> = HashMap::new();
    let t0 = sim.time();
    let mut t_prev = t0;
    for _ in 0..events {
        let (sa, sb) = (sim.state.a.clone(), sim.state.b.clone());
        let ev = sim.step_until(f64::INFINITY).expect("no horizon");
        *a.entry(sa).or_insert(0.0) += ev.time - t_prev;
        *b.entry(sb).or_insert(0.0) += ev.time - t_prev;
        t_prev = ev.time;
    }
    let total = t_prev - t0;
    for v in a.values_mut().chain(b.values_mut()) {
        *v /= total;
    }
    (a, b)
}

/// A recorded coupled path.
#[derive(Debug, Clone)]
pub struct CoupledTrace {
    pub params: SystemParams,
    pub policy_a: Policy,
    pub policy_b: Policy,
    pub seed: u64,
    pub horizon: f64,
    pub initial: CoupledState,
    pub events: Vec<CoupledEvent>,
    pub checks: CouplingChecks,
}

impl CoupledTrace {
    /// Calls `visit(event, state_after)` for the start (`None`) and every event.
    pub fn replay(&self, mut visit: impl FnMut(Option<&CoupledEvent>, &CoupledState)) {
        let mut s = self.initial.clone();
        visit(None, &s);
        for ev in &self.events {
            match ev.kind {
                CoupledKind::Arrival { a, b, differ } => {
                    apply_assignment(&mut s.a, a);
                    apply_assignment(&mut s.b, b);
                    s.delta += u64::from(differ);
                }
                CoupledKind::Departure { level_a, level_b, .. } => {
                    if let Some(l) = level_a {
                        s.a.remove_task(l);
                    }
                    if let Some(l) = level_b {
                        s.b.remove_task(l);
                    }
                }
            }
            visit(Some(ev), &s);
        }
    }
}

/// Simulates the coupled pair on `[0, horizon]`, recording every event.
pub fn simulate_coupled(
    params: &SystemParams,
    policy_a: &PolicySpec,
    policy_b: &PolicySpec,
    horizon: f64,
    q0_a: &OccupancyState,
    q0_b: &OccupancyState,
    seed: u64,
) -> Result<CoupledTrace> {
    let pa = policy_a.resolve(params.pools)?;
    let pb = policy_b.resolve(params.pools)?;
    let mut sim = CoupledSimulation::new(*params, pa, pb, q0_a.clone(), q0_b.clone(), seed)?;
    let initial = sim.state().clone();
    let mut events = Vec::new();
    while let Some(ev) = sim.step_until(horizon) {
        events.push(ev);
    }
    Ok(CoupledTrace {
        params: *params,
        policy_a: pa,
        policy_b: pb,
        seed,
        horizon: horizon.max(0.0),
        initial,
        events,
        checks: sim.checks.clone(),
    })
}

/// Empirical alikeness metric of a trace at scale `g`, re-verifying the `2 delta`
/// bound on every recorded state.
pub fn delta_and_gap(trace: &CoupledTrace, g: f64) -> Result<AlikenessMetric> {
    let mut checks = trace.checks.gap(g)?;
    let initial = trace.initial.sum_abs_diff();
    let mut ok = true;
    trace.replay(|_, s| ok &= s.sum_abs_diff() <= initial + 2 * s.delta as usize);
    checks.two_delta_ok &= ok;
    Ok(checks)
}
