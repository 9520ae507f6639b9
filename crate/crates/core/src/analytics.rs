//! Closed forms and exact oracles: Erlang loss, loss bounds, the scaled-loss
//! target, small-instance generator solves, tagged-pool quantities and the
//! alikeness conditions on `d(N)`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::distribution::{Continuous, Normal};

use crate::error::{out_of_range, Error, Result};
use crate::model::{snap_floor, Buffer, GrowthSpec, OccupancyState, SystemParams};
use crate::policies::{min_sampled_rank, Policy};
use crate::rng::{exponential, seeded};

/// Every valid occupancy state with `pools` pools and finite buffer `buffer`,
/// in lexicographic order of `(Q_1, ..., Q_B)`.
pub fn enumerate_states(pools: usize, buffer: usize) -> Vec<OccupancyState> {
    fn rec(pools: usize, buffer: usize, cap: usize, prefix: &mut Vec<usize>, out: &mut Vec<OccupancyState>) {
        if prefix.len() == buffer {
            out.push(OccupancyState::new(pools, Buffer::Finite(buffer), prefix.clone()).expect("valid by construction"));
            return;
        }
        for q in 0..=cap {
            prefix.push(q);
            rec(pools, buffer, q, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(pools, buffer, pools, &mut Vec::with_capacity(buffer), &mut out);
    out
}

/// `C(pools + buffer, buffer)`, the number of states [`enumerate_states`] yields.
pub fn state_count(pools: usize, buffer: usize) -> u128 {
    let mut c: u128 = 1;
    for i in 1..=buffer as u128 {
        c = c * (pools as u128 + i) / i;
    }
    c
}

/// Erlang B blocking probability for `capacity` servers at offered load `load`.
pub fn erlang_b(capacity: usize, load: f64) -> f64 {
    let mut b = 1.0;
    for c in 1..=capacity {
        b = load * b / (c as f64 + load * b);
    }
    b
}

/// Largest generator the dense oracle will factor.
pub const MAX_ORACLE_STATES: usize = 3000;

/// Stationary distribution of a finite irreducible generator (rows sum to 0),
/// by a pivoted LU solve of `pi G = 0`, `sum pi = 1`.
pub fn solve_stationary(generator: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = generator.nrows();
    if n != generator.ncols() || n == 0 {
        return Err(Error::InvalidParameter("generator must be square and nonempty".into()));
    }
    if n > MAX_ORACLE_STATES {
        return Err(Error::StateSpaceTooLarge {
            states: n as u128,
            limit: MAX_ORACLE_STATES as u128,
        });
    }
    let mut a = generator.transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidParameter("singular generator (chain not irreducible?)".into()))?;
    Ok(pi.iter().map(|&x| x.max(0.0)).collect())
}

/// Stationary law of a finite birth-death chain on `0..=birth.len()` with
/// `birth[x]` the rate `x -> x+1` and `death[x]` the rate `x+1 -> x`, via the
/// generic generator solve.
pub fn birth_death_stationary(birth: &[f64], death: &[f64]) -> Result<Vec<f64>> {
    if birth.len() != death.len() {
        return Err(Error::InvalidParameter("birth and death rate vectors differ in length".into()));
    }
    let n = birth.len() + 1;
    let mut g = DMatrix::zeros(n, n);
    for x in 0..birth.len() {
        g[(x, x + 1)] = birth[x];
        g[(x + 1, x)] = death[x];
    }
    for x in 0..n {
        let s: f64 = (0..n).filter(|&y| y != x).map(|y| g[(x, y)]).sum();
        g[(x, x)] = -s;
    }
    solve_stationary(&g)
}

/// Blocking of the `M/M/C/C` system obtained from the generator solve
/// (the time-stationary probability of being full).
pub fn erlang_b_by_generator(capacity: usize, load: f64) -> Result<f64> {
    let birth = vec![load; capacity];
    let death: Vec<f64> = (1..=capacity).map(|c| c as f64).collect();
    Ok(*birth_death_stationary(&birth, &death)?.last().expect("nonempty"))
}

/// `p(n, d) = (1 - (n+1)/N)^d`: the chance that `d` samples with replacement
/// all miss the `n + 1` least-loaded pools.
pub fn p_reject(pools: usize, n: usize, d: usize) -> Result<f64> {
    if n >= pools {
        return Err(out_of_range("sloppiness n", n, format!("0..={}", pools.saturating_sub(1))));
    }
    if d == 0 {
        return Err(out_of_range("sample size d", d, ">= 1"));
    }
    Ok((1.0 - (n + 1) as f64 / pools as f64).powi(d as i32))
}

/// How the arrival rate of the modified Erlang system is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModifiedRate {
    /// Admitted rate `lambda(N) (1 - p)`.
    #[default]
    Admitted,
    /// Literal `lambda(N) p`.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBounds {
    pub lower: f64,
    pub upper: f64,
    pub p_reject: f64,
}

/// Erlang lower bound and modified-Erlang upper bound on the stationary loss
/// of JSQ(d) with sloppiness `n`.
pub fn loss_bounds(params: &SystemParams, n: usize, d: usize, reading: ModifiedRate) -> Result<LossBounds> {
    let b = params
        .buffer
        .capacity()
        .ok_or_else(|| Error::InvalidParameter("loss bounds need a finite buffer".into()))?;
    let pools = params.pools;
    let p = p_reject(pools, n, d)?;
    let lower = erlang_b(b * pools, params.arrival_rate);
    let rate = match reading {
        ModifiedRate::Admitted => params.arrival_rate * (1.0 - p),
        ModifiedRate::Literal => params.arrival_rate * p,
    };
    let upper = p + (1.0 - p) * erlang_b(b * (pools - n), rate);
    Ok(LossBounds { lower, upper, p_reject: p })
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

pub fn normal_pdf(x: f64) -> f64 {
    standard_normal().pdf(x)
}

/// `Phi(x) = erfc(-x / sqrt 2) / 2`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Limit of `sqrt(N)` times the loss: `phi(beta) / (sqrt(B) Phi(beta))`.
pub fn asymptotic_scaled_loss(buffer: usize, beta: f64) -> Result<f64> {
    if buffer == 0 {
        return Err(out_of_range("buffer", 0, ">= 1"));
    }
    Ok(normal_pdf(beta) / ((buffer as f64).sqrt() * normal_cdf(beta)))
}

/// One row of loss diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub pools: usize,
    pub buffer: usize,
    pub arrival_rate: f64,
    pub d: usize,
    pub n: usize,
    pub beta: f64,
    pub loss_emp: f64,
    pub loss_ci_half: f64,
    pub lower: f64,
    pub upper: f64,
    pub asymptotic: f64,
    pub sqrt_n_loss: f64,
}

impl LossReport {
    pub fn new(
        params: &SystemParams,
        d: usize,
        n: usize,
        loss_emp: f64,
        loss_ci_half: f64,
        reading: ModifiedRate,
    ) -> Result<Self> {
        let bounds = loss_bounds(params, n, d, reading)?;
        let b = params.buffer.capacity().expect("checked by loss_bounds");
        let beta = crate::limits::halfin_whitt_beta(params.pools, b, params.arrival_rate);
        Ok(LossReport {
            pools: params.pools,
            buffer: b,
            arrival_rate: params.arrival_rate,
            d,
            n,
            beta,
            loss_emp,
            loss_ci_half,
            lower: bounds.lower,
            upper: bounds.upper,
            asymptotic: asymptotic_scaled_loss(b, beta)?,
            sqrt_n_loss: params.sqrt_n() * loss_emp,
        })
    }

    /// Whether `lower <= loss <= upper` holds up to `slack` confidence half-widths.
    pub fn bracketed(&self, slack: f64) -> bool {
        let tol = slack * self.loss_ci_half;
        self.lower <= self.loss_emp + tol && self.loss_emp - tol <= self.upper
    }
}

/// Exact stationary law of the occupancy chain for a small instance.
#[derive(Debug, Clone)]
pub struct ExactStationary {
    pub states: Vec<OccupancyState>,
    pub pi: Vec<f64>,
    /// Probability that an arrival is lost, `sum_s pi(s) P(block | s)`.
    pub loss: f64,
}

impl ExactStationary {
    pub fn probability(&self, state: &OccupancyState) -> f64 {
        self.states
            .iter()
            .position(|s| s == state)
            .map_or(0.0, |i| self.pi[i])
    }

    /// Time-stationary `E[q_i]` per level.
    pub fn mean_fluid(&self) -> Vec<f64> {
        let levels = self.states.first().map_or(0, |s| s.levels());
        let n = self.states.first().map_or(1, |s| s.pools()) as f64;
        let mut m = vec![0.0; levels];
        for (s, &p) in self.states.iter().zip(&self.pi) {
            for (i, &q) in s.counts().iter().enumerate() {
                m[i] += p * q as f64 / n;
            }
        }
        m
    }

    /// Total variation distance to an empirical law over the same states.
    pub fn total_variation(&self, empirical: &HashMap<OccupancyState, f64>) -> f64 {
        let mut tv = 0.0;
        for (s, &p) in self.states.iter().zip(&self.pi) {
            tv += (p - empirical.get(s).copied().unwrap_or(0.0)).abs();
        }
        let outside: f64 = empirical
            .iter()
            .filter(|(s, _)| !self.states.contains(s))
            .map(|(_, &p)| p)
            .sum();
        0.5 * (tv + outside)
    }
}

/// Builds the generator of the occupancy chain from the policy's rank law and
/// solves it exactly.
pub fn exact_stationary_small(params: &SystemParams, policy: &Policy) -> Result<ExactStationary> {
    let b = params
        .buffer
        .capacity()
        .ok_or_else(|| Error::InvalidParameter("exact solve needs a finite buffer".into()))?;
    let count = state_count(params.pools, b);
    if count > MAX_ORACLE_STATES as u128 {
        return Err(Error::StateSpaceTooLarge {
            states: count,
            limit: MAX_ORACLE_STATES as u128,
        });
    }
    policy.validate(params.pools)?;
    let states = enumerate_states(params.pools, b);
    let index: HashMap<&OccupancyState, usize> = states.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let law = policy.rank_law(params.pools);
    let s_count = states.len();
    let mut g = DMatrix::zeros(s_count, s_count);
    let mut block = vec![0.0; s_count];
    for (from, s) in states.iter().enumerate() {
        // arrival: aggregate the rank law by the size at each rank
        let mut by_size = vec![0.0; b + 1];
        for (c, &p) in law.iter().enumerate() {
            by_size[s.size_at_rank(c + 1)] += p;
        }
        block[from] = by_size[b];
        for (size, &p) in by_size[..b].iter().enumerate() {
            if p > 0.0 {
                let mut t = s.clone();
                t.add_task(size);
                g[(from, index[&t])] += params.arrival_rate * p;
            }
        }
        for level in 1..=b {
            let exactly = s.pools_with_exactly(level);
            if exactly > 0 {
                let mut t = s.clone();
                t.remove_task(level);
                g[(from, index[&t])] += params.service.level_rate(level, exactly as f64);
            }
        }
        let out: f64 = (0..s_count).filter(|&j| j != from).map(|j| g[(from, j)]).sum();
        g[(from, from)] = -out;
    }
    let pi = solve_stationary(&g)?;
    let loss = pi.iter().zip(&block).map(|(p, q)| p * q).sum();
    Ok(ExactStationary { states, pi, loss })
}

/// Two-state limit of the task count at a tagged pool, on `{K, K+1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaggedProcess {
    pub k: usize,
    pub f: f64,
    /// Rate `K -> K+1`.
    pub up_rate: f64,
    /// Rate `K+1 -> K`.
    pub down_rate: f64,
}

impl TaggedProcess {
    /// `(P(K), P(K+1))` solving global balance.
    pub fn stationary(&self) -> (f64, f64) {
        if self.up_rate == 0.0 {
            return (1.0, 0.0);
        }
        let total = self.up_rate + self.down_rate;
        (self.down_rate / total, self.up_rate / total)
    }

    /// Whether the process never leaves `K`.
    pub fn is_constant(&self) -> bool {
        self.up_rate == 0.0
    }

    /// Fraction of `[0, horizon]` spent at `K + 1`, started from `K`.
    pub fn simulate_fraction_high(&self, horizon: f64, seed: u64) -> f64 {
        if self.is_constant() || horizon <= 0.0 {
            return 0.0;
        }
        let mut rng = seeded(seed);
        let mut t = 0.0;
        let mut high = false;
        let mut at_high = 0.0;
        while t < horizon {
            let rate = if high { self.down_rate } else { self.up_rate };
            let dt = exponential(&mut rng, rate).min(horizon - t);
            if high {
                at_high += dt;
            }
            t += dt;
            high = !high;
        }
        at_high / horizon
    }
}

fn k_and_f(lambda: f64) -> Result<(usize, f64)> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("load must be positive, got {lambda}")));
    }
    let k = snap_floor(lambda);
    Ok((k as usize, (lambda - k).max(0.0)))
}

/// Task count at a tagged pool in the fluid steady state at load `lambda`.
pub fn tagged_pool(lambda: f64) -> Result<TaggedProcess> {
    let (k, f) = k_and_f(lambda)?;
    let up_rate = if f > 0.0 { (k + 1) as f64 * f / (1.0 - f) } else { 0.0 };
    Ok(TaggedProcess {
        k,
        f,
        up_rate,
        down_rate: (k + 1) as f64,
    })
}

/// The pool seen by a tagged task: the tagged-pool process with the tagged
/// task never leaving, so the down-rate drops to `K`.
pub fn tagged_task_process(lambda: f64) -> Result<TaggedProcess> {
    let mut p = tagged_pool(lambda)?;
    p.down_rate = p.k as f64;
    Ok(p)
}

/// `((1-f) K h(K) + f (K+1) h(K+1)) / lambda`.
pub fn tagged_task_measure(lambda: f64, h: impl Fn(usize) -> f64) -> Result<f64> {
    let (k, f) = k_and_f(lambda)?;
    let low = k as f64 * h(k);
    if f == 0.0 {
        return Ok(low / lambda);
    }
    let high = (k + 1) as f64 * h(k + 1);
    // low + f (high - low) keeps h = 1 exact: K + f == lambda
    Ok((low + f * (high - low)) / lambda)
}

/// `h(x) = 1 / (x + 1)`.
pub fn harmonic(x: usize) -> f64 {
    1.0 / (x as f64 + 1.0)
}

/// Alikeness value above which the criterion counts as met at a single `N`.
pub const ALIKENESS_THRESHOLD: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AlikenessAt {
    pub g: f64,
    /// Constructive sloppiness, when the recipe applies.
    pub suggested_n: Option<usize>,
    /// `d n / N - log(N / g)` with the suggested `n` (0 when absent).
    pub value: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlikenessReport {
    pub pools: usize,
    pub d: usize,
    /// On the scale `g = N`.
    pub fluid: AlikenessAt,
    /// On the scale `g = sqrt(N)`.
    pub diffusion: AlikenessAt,
    /// On the requested scale.
    pub requested: AlikenessAt,
}

impl AlikenessReport {
    pub fn fluid_ok(&self) -> bool {
        self.fluid.ok
    }

    pub fn diffusion_ok(&self) -> bool {
        self.diffusion.ok
    }
}

fn alikeness_at(pools: usize, d: usize, g: f64) -> AlikenessAt {
    let n_f = pools as f64;
    let log_ratio = (n_f / g).ln().max(0.0);
    if d >= pools {
        // full JSQ: sampling never misses, any n works
        return AlikenessAt {
            g,
            suggested_n: Some(0),
            value: f64::INFINITY,
            ok: true,
        };
    }
    let d_f = d as f64;
    let raw = if g >= n_f {
        let ld = d_f.ln();
        (ld > 0.0).then(|| n_f / ld)
    } else {
        let h = d_f * (g / n_f) / log_ratio;
        let lh = h.ln();
        (lh > 0.0).then(|| g / lh)
    };
    let suggested_n = raw.map(|x| x.floor().clamp(0.0, (pools - 1) as f64) as usize);
    let value = d_f * suggested_n.unwrap_or(0) as f64 / n_f - log_ratio;
    AlikenessAt {
        g,
        suggested_n,
        value,
        ok: suggested_n.is_some() && value > ALIKENESS_THRESHOLD,
    }
}

/// Evaluates the sufficient condition for JSQ(d) and JSQ to be `g`-alike at a
/// single `N`, with the constructive choice of `n`.
pub fn alikeness_criteria(pools: usize, g: &GrowthSpec, d: &GrowthSpec) -> Result<AlikenessReport> {
    if pools < 2 {
        return Err(out_of_range("pools", pools, ">= 2"));
    }
    let d = d.sample_size(pools)?;
    let g_val = g.value(pools)?;
    if !(g_val > 0.0) {
        return Err(Error::InvalidParameter(format!("scale g(N) must be positive, got {g_val}")));
    }
    let n_f = pools as f64;
    Ok(AlikenessReport {
        pools,
        d,
        fluid: alikeness_at(pools, d, n_f),
        diffusion: alikeness_at(pools, d, n_f.sqrt()),
        requested: alikeness_at(pools, d, g_val.min(n_f)),
    })
}

/// Rates of a finite birth-death chain on `0..=cap`, possibly modulated by
/// an outside state; `birth(cap)` and `death(0)` are ignored.
pub trait BirthDeathRates {
    fn cap(&self) -> usize;
    fn birth(&self, x: usize) -> f64;
    fn death(&self, x: usize) -> f64;
}

/// A birth-death chain given by explicit rate tables.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    /// `birth[x]` for `x` in `0..=cap`.
    pub birth: Vec<f64>,
    /// `death[x]` for `x` in `0..=cap`.
    pub death: Vec<f64>,
}

impl BirthDeathRates for RateTable {
    fn cap(&self) -> usize {
        self.birth.len() - 1
    }

    fn birth(&self, x: usize) -> f64 {
        if x >= self.cap() {
            0.0
        } else {
            self.birth[x]
        }
    }

    fn death(&self, x: usize) -> f64 {
        if x == 0 {
            0.0
        } else {
            self.death[x]
        }
    }
}

/// Checks the comparison hypotheses: `cap1 <= cap2` and, on `0..=cap1`,
/// `birth1 <= birth2` and `death1 >= death2`.
pub fn dominates(lower: &RateTable, upper: &RateTable) -> bool {
    lower.cap() <= upper.cap()
        && (0..=lower.cap()).all(|x| lower.birth(x) <= upper.birth(x) && lower.death(x) >= upper.death(x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonOutcome {
    pub events: u64,
    /// Events after which `X1 > X2`.
    pub violations: u64,
    pub final_state: (usize, usize),
}

/// Runs two birth-death chains on shared birth and death clocks of rates
/// `max(birth1, birth2)` and `max(death1, death2)`, each thinned by one shared
/// uniform.
pub fn compare_birth_death<R1: BirthDeathRates, R2: BirthDeathRates>(
    first: &R1,
    second: &R2,
    start: (usize, usize),
    horizon: f64,
    seed: u64,
) -> Result<ComparisonOutcome> {
    if start.0 > first.cap() || start.1 > second.cap() {
        return Err(Error::InvalidState("start outside the chains' state spaces".into()));
    }
    let mut rng = seeded(seed);
    let (mut x1, mut x2) = start;
    let mut t = 0.0;
    let mut events = 0;
    let mut violations = 0;
    loop {
        let (b1, b2) = (first.birth(x1), second.birth(x2));
        let (d1, d2) = (first.death(x1), second.death(x2));
        let mb = b1.max(b2);
        let md = d1.max(d2);
        if mb + md <= 0.0 {
            break;
        }
        t += exponential(&mut rng, mb + md);
        if t > horizon {
            break;
        }
        let birth_clock = rng.random::<f64>() * (mb + md) < mb;
        let u: f64 = rng.random();
        if birth_clock {
            if u * mb < b1 {
                x1 += 1;
            }
            if u * mb < b2 {
                x2 += 1;
            }
        } else {
            if u * md < d1 {
                x1 -= 1;
            }
            if u * md < d2 {
                x2 -= 1;
            }
        }
        events += 1;
        if x1 > x2 {
            violations += 1;
        }
    }
    Ok(ComparisonOutcome {
        events,
        violations,
        final_state: (x1, x2),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichOutcome {
    pub events: u64,
    /// Events after which `Y_modified <= Y_jsqd <= Y_erlang` failed.
    pub violations: u64,
    /// Final totals `(modified, jsqd, erlang)`.
    pub final_totals: (usize, usize, usize),
    /// Arrivals offered to each of the three systems and per-system losses.
    pub arrivals: u64,
    pub losses: (u64, u64, u64),
}

/// Couples the modified Erlang system, JSQ(d) and the Erlang system
/// `M/M/BN/BN` on one birth clock of rate `lambda(N)` and one death clock,
/// following the birth-death comparison construction. All three start empty.
pub fn loss_sandwich_coupling(
    params: &SystemParams,
    d: usize,
    with_replacement: bool,
    n: usize,
    horizon: f64,
    seed: u64,
) -> Result<SandwichOutcome> {
    let b = params
        .buffer
        .capacity()
        .ok_or_else(|| Error::InvalidParameter("sandwich needs a finite buffer".into()))?;
    let pools = params.pools;
    let p = p_reject(pools, n, d)?;
    Policy::JsqD { d, with_replacement }.validate(pools)?;
    let cap_er = b * pools;
    let cap_mod = b * (pools - n);
    let mut state = OccupancyState::empty(pools, params.buffer)?;
    let (mut y_mod, mut y_er) = (0usize, 0usize);
    let mut rng = seeded(seed);
    let lambda = params.arrival_rate;
    let mut t = 0.0;
    let mut out = SandwichOutcome {
        events: 0,
        violations: 0,
        final_totals: (0, 0, 0),
        arrivals: 0,
        losses: (0, 0, 0),
    };
    loop {
        let y = state.total_tasks();
        let md = y_mod.max(y).max(y_er) as f64;
        t += exponential(&mut rng, lambda + md);
        if t > horizon {
            break;
        }
        let birth_clock = rng.random::<f64>() * (lambda + md) < lambda;
        let u: f64 = rng.random();
        if birth_clock {
            out.arrivals += 1;
            // JSQ(d): the minimum sampled rank at v = 1 - u is non-full iff
            // u <= P(some sampled pool is non-full)
            let rank = min_sampled_rank(pools, d, with_replacement, 1.0 - u);
            let size = state.size_at_rank(rank);
            if size < b {
                state.add_task(size);
            } else {
                out.losses.1 += 1;
            }
            if y_er < cap_er {
                y_er += 1;
            } else {
                out.losses.2 += 1;
            }
            if u <= 1.0 - p && y_mod < cap_mod {
                y_mod += 1;
            } else {
                out.losses.0 += 1;
            }
        } else {
            if u * md < y_mod as f64 {
                y_mod -= 1;
            }
            if u * md < y_er as f64 {
                y_er -= 1;
            }
            if u * md < y as f64 {
                let level = crate::engine::departure_level(&state, params, rng.random());
                state.remove_task(level);
            }
        }
        out.events += 1;
        let y = state.total_tasks();
        if !(y_mod <= y && y <= y_er) {
            out.violations += 1;
        }
    }
    out.final_totals = (y_mod, state.total_tasks(), y_er);
    Ok(out)
}
