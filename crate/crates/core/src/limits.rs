//! Fluid ODE, limiting diffusions, and the maps from raw occupancy paths to
//! centered and scaled coordinates.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::engine::Trajectory;
use crate::error::{Error, Result};
use crate::model::{assignment_fractions, Buffer, FluidState, OccupancyState, ServiceMode, SystemParams};
use crate::rng::seeded;

/// `dq_i/dt = lambda p_{i-1}(q) - mu_i(q)` for the stored levels. For a finite
/// buffer the overflow fraction `p_B` leaves the system.
pub fn fluid_rhs(q: &FluidState, lambda: f64, mode: ServiceMode) -> Vec<f64> {
    let p = assignment_fractions(q, lambda, mode);
    (1..=q.levels())
        .map(|i| lambda * p[i - 1] - q.level_rate(i, mode))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluidTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<FluidState>,
    pub step: f64,
}

impl FluidTrajectory {
    pub fn terminal(&self) -> &FluidState {
        self.states.last().expect("trajectory holds its initial state")
    }
}

/// Clamps to `[0, 1]` and enforces monotonicity by a downward sweep.
fn project(q: &mut [f64]) {
    let mut prev = 1.0;
    for x in q.iter_mut() {
        *x = x.clamp(0.0, prev);
        prev = *x;
    }
}

fn euler_step(q: &mut Vec<f64>, buffer: Buffer, lambda: f64, mode: ServiceMode, step: f64) {
    if buffer == Buffer::Unbounded && q.last().is_none_or(|&x| x > 0.0) {
        q.push(0.0);
    }
    let state = FluidState::from_raw(std::mem::take(q), buffer);
    let rhs = fluid_rhs(&state, lambda, mode);
    *q = state.values().to_vec();
    for (x, dx) in q.iter_mut().zip(rhs) {
        *x += step * dx;
    }
    project(q);
}

/// Explicit Euler with `m(q)` recomputed every step and projection onto the
/// valid states; records every `record_every`-th step plus the endpoint.
pub fn integrate_fluid_recorded(
    q0: &FluidState,
    lambda: f64,
    mode: ServiceMode,
    horizon: f64,
    step: f64,
    record_every: usize,
) -> Result<FluidTrajectory> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("load must be positive, got {lambda}")));
    }
    let record_every = record_every.max(1);
    let steps = (horizon.max(0.0) / step).round() as usize;
    let buffer = q0.buffer();
    let mut q = q0.values().to_vec();
    let mut times = vec![0.0];
    let mut states = vec![q0.clone()];
    for s in 1..=steps {
        euler_step(&mut q, buffer, lambda, mode, step);
        if s % record_every == 0 || s == steps {
            times.push(s as f64 * step);
            states.push(FluidState::from_raw(q.clone(), buffer));
        }
    }
    Ok(FluidTrajectory { times, states, step })
}

/// [`integrate_fluid_recorded`] recording every step.
pub fn integrate_fluid(
    q0: &FluidState,
    lambda: f64,
    mode: ServiceMode,
    horizon: f64,
    step: f64,
) -> Result<FluidTrajectory> {
    integrate_fluid_recorded(q0, lambda, mode, horizon, step, 1)
}

/// `q*`: `1` for `i <= K`, `f` at `K+1`, `0` beyond.
pub fn fluid_fixed_point(lambda: f64, buffer: Buffer) -> Result<FluidState> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("load must be positive, got {lambda}")));
    }
    let k = crate::model::snap_floor(lambda) as usize;
    let f = (lambda - k as f64).max(0.0);
    let levels = match buffer {
        Buffer::Finite(b) => {
            if lambda > b as f64 {
                return Err(Error::InvalidParameter(format!("load {lambda} exceeds buffer {b}")));
            }
            b
        }
        Buffer::Unbounded => k + usize::from(f > 0.0),
    };
    let mut q = vec![0.0; levels];
    q[..k].fill(1.0);
    if f > 0.0 {
        q[k] = f;
    }
    FluidState::new(q, buffer)
}

/// `beta = (K N - lambda(N)) / sqrt(N)`.
pub fn halfin_whitt_beta(pools: usize, k: usize, arrival_rate: f64) -> f64 {
    ((k * pools) as f64 - arrival_rate) / (pools as f64).sqrt()
}

/// Randomness for a diffusion path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    /// Brownian increments set to zero.
    Off,
    Seeded(u64),
}

/// A discretized diffusion path; `values[j]` holds every coordinate at
/// `times[j]` and `v1[j]` the regulator.
#[derive(Debug, Clone, PartialEq)]
pub struct SdePath {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub v1: Vec<f64>,
    pub step: f64,
}

impl SdePath {
    pub fn coordinate(&self, index: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[index]).collect()
    }

    /// `sum_j 1{zeta1 > tol} dV1` over steps, with `zeta1` read after the step.
    pub fn complementarity(&self, tol: f64) -> f64 {
        self.values
            .windows(2)
            .zip(self.v1.windows(2))
            .filter(|(z, _)| z[1][0] > tol)
            .map(|(_, v)| v[1] - v[0])
            .sum()
    }
}

struct Gaussians {
    rng: Option<crate::rng::SimRng>,
}

impl Gaussians {
    fn new(noise: Noise) -> Self {
        Gaussians {
            rng: match noise {
                Noise::Off => None,
                Noise::Seeded(seed) => Some(seeded(seed)),
            },
        }
    }

    fn next(&mut self) -> f64 {
        self.rng.as_mut().map_or(0.0, |r| r.sample(StandardNormal))
    }
}

fn check_step(step: f64) -> Result<()> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
    }
    Ok(())
}

/// Exact transitions of `dX = -X dt + sqrt(2 lambda) dW`:
/// `X_{t+h} = X_t e^{-h} + sqrt(lambda (1 - e^{-2h})) Z`.
pub fn simulate_ou_exact(x0: f64, lambda: f64, horizon: f64, step: f64, noise: Noise) -> Result<SdePath> {
    check_step(step)?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("load must be positive, got {lambda}")));
    }
    let decay = (-step).exp();
    let sd = (lambda * -(-2.0 * step).exp_m1()).sqrt();
    let steps = (horizon.max(0.0) / step).round() as usize;
    let mut z = Gaussians::new(noise);
    let mut x = x0;
    let mut times = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    times.push(0.0);
    values.push(vec![x]);
    for s in 1..=steps {
        x = x * decay + sd * z.next();
        times.push(s as f64 * step);
        values.push(vec![x]);
    }
    Ok(SdePath {
        v1: vec![0.0; times.len()],
        times,
        values,
        step,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectedOptions {
    pub k: usize,
    pub beta: f64,
    pub horizon: f64,
    pub step: f64,
    /// Initial values of the deterministic higher coordinates
    /// `Qhat_{K+2}, ..., Qhat_M`; empty for the bare pair.
    pub tail: Vec<f64>,
}

/// Euler-Maruyama for
/// `d zeta1 = (beta - zeta1 - K zeta2) dt + sqrt(2K) dW + dV1`,
/// `d zeta2 = dV1 - (K+1)(zeta2 - Qhat_{K+2}) dt`,
/// with `V1` the Skorokhod regulator keeping `zeta1 >= 0` and the tail
/// following `d Qhat_i = -i (Qhat_i - Qhat_{i+1}) dt`.
/// Coordinates in the path: `zeta1, zeta2, tail...`.
pub fn simulate_reflected(z0: (f64, f64), opts: &ReflectedOptions, noise: Noise) -> Result<SdePath> {
    check_step(opts.step)?;
    if !(z0.0 >= 0.0) {
        return Err(Error::InvalidParameter(format!("zeta1(0) must be >= 0, got {}", z0.0)));
    }
    if opts.k == 0 {
        return Err(Error::InvalidParameter("K must be >= 1".into()));
    }
    let h = opts.step;
    let k = opts.k as f64;
    let diffusion = (2.0 * k * h).sqrt();
    let steps = (opts.horizon.max(0.0) / h).round() as usize;
    let mut z = Gaussians::new(noise);
    let (mut z1, mut z2) = z0;
    let mut tail = opts.tail.clone();
    let mut v1 = 0.0;
    let mut times = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    let mut regulator = Vec::with_capacity(steps + 1);
    let snapshot = |z1: f64, z2: f64, tail: &[f64]| {
        let mut v = Vec::with_capacity(2 + tail.len());
        v.push(z1);
        v.push(z2);
        v.extend_from_slice(tail);
        v
    };
    times.push(0.0);
    values.push(snapshot(z1, z2, &tail));
    regulator.push(0.0);
    for s in 1..=steps {
        let next_tail = |i: usize| tail.get(i).copied().unwrap_or(0.0);
        let mut free = z1 + (opts.beta - z1 - k * z2) * h + diffusion * z.next();
        let dv = if free < 0.0 {
            let dv = -free;
            free = 0.0;
            dv
        } else {
            0.0
        };
        let new_z2 = z2 + dv - (k + 1.0) * (z2 - next_tail(0)) * h;
        let new_tail: Vec<f64> = (0..tail.len())
            .map(|j| {
                let level = (opts.k + 2 + j) as f64;
                tail[j] - level * (tail[j] - next_tail(j + 1)) * h
            })
            .collect();
        z1 = free;
        z2 = new_z2;
        tail = new_tail;
        v1 += dv;
        times.push(s as f64 * h);
        values.push(snapshot(z1, z2, &tail));
        regulator.push(v1);
    }
    Ok(SdePath {
        times,
        values,
        v1: regulator,
        step: h,
    })
}

/// Which diffusion centering to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `f > 0`: `(N - Q_i)/sqrt N` for `i <= K`, `(Q_{K+1} - f(N))/sqrt N`, raw beyond.
    Fractional,
    /// `f = 0` in the Halfin-Whitt sense, `K` the nearest integer to `lambda`.
    Integral,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Fractional => "f>0",
            Regime::Integral => "f=0",
        })
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "f>0" | "fractional" => Ok(Regime::Fractional),
            "f=0" | "integral" => Ok(Regime::Integral),
            other => Err(Error::Parse(format!("unknown regime '{other}' (expected f>0 or f=0)"))),
        }
    }
}

/// Largest `|beta|` accepted as an integral-load regime at finite `N`.
pub const MAX_INTEGRAL_BETA: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSnapshot {
    pub time: f64,
    /// `(level, value)` in the regime's scaling. For `f = 0`, level `K - 1`
    /// carries the aggregated `sum_{i<K} (N - Q_i)/sqrt N` (omitted when `K = 1`).
    pub scaled: Vec<(usize, f64)>,
    /// Total tasks `Y = sum_i Q_i`.
    pub y: i64,
    /// `D+ = Z1 = sum_{i<=K} (N - Q_i)`.
    pub d_plus: i64,
    /// `D- = sum_{i>=K+2} Q_i`.
    pub d_minus: i64,
    /// `Z2 = Q_{K+1}`.
    pub z2: i64,
}

impl DiffusionSnapshot {
    pub fn z1(&self) -> i64 {
        self.d_plus
    }

    /// `Y - K N - (Z2 - Z1 + D-)`, which vanishes for every state.
    pub fn identity_residual(&self, k: usize, pools: usize) -> i64 {
        self.y - (k * pools) as i64 - (self.z2 - self.d_plus + self.d_minus)
    }
}

/// Maps occupancy states to diffusion coordinates for fixed parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionScaler {
    pub pools: usize,
    pub k: usize,
    pub regime: Regime,
    /// `f(N)` for the fractional regime, 0 otherwise.
    pub f_n: f64,
    pub beta: f64,
}

impl DiffusionScaler {
    pub fn new(params: &SystemParams, regime: Regime) -> Result<Self> {
        let pools = params.pools;
        match regime {
            Regime::Fractional => {
                if params.f() <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "regime f>0 requested but lambda = {} is integral",
                        params.lambda()
                    )));
                }
                Ok(DiffusionScaler {
                    pools,
                    k: params.k(),
                    regime,
                    f_n: params.f_n(),
                    beta: halfin_whitt_beta(pools, params.k(), params.arrival_rate),
                })
            }
            Regime::Integral => {
                let k = params.lambda().round() as usize;
                let beta = halfin_whitt_beta(pools, k, params.arrival_rate);
                if k == 0 || beta.abs() > MAX_INTEGRAL_BETA {
                    return Err(Error::InvalidParameter(format!(
                        "regime f=0 requested but lambda = {} is not near an integer (beta = {beta})",
                        params.lambda()
                    )));
                }
                Ok(DiffusionScaler {
                    pools,
                    k,
                    regime,
                    f_n: 0.0,
                    beta,
                })
            }
        }
    }

    pub fn scale(&self, time: f64, state: &OccupancyState) -> DiffusionSnapshot {
        let n = self.pools;
        let sqrt_n = (n as f64).sqrt();
        let k = self.k;
        let gap = |i: usize| (n - state.level(i)) as i64;
        let d_plus: i64 = (1..=k).map(gap).sum();
        let z2 = state.level(k + 1) as i64;
        let d_minus: i64 = (k + 2..=state.levels()).map(|i| state.level(i) as i64).sum();
        let top = state.levels().max(k + 1);
        let mut scaled = Vec::with_capacity(top);
        match self.regime {
            Regime::Fractional => {
                for i in 1..=top {
                    let value = if i <= k {
                        gap(i) as f64 / sqrt_n
                    } else if i == k + 1 {
                        (state.level(i) as f64 - self.f_n) / sqrt_n
                    } else {
                        state.level(i) as f64
                    };
                    scaled.push((i, value));
                }
            }
            Regime::Integral => {
                if k >= 2 {
                    let agg: i64 = (1..k).map(gap).sum();
                    scaled.push((k - 1, agg as f64 / sqrt_n));
                }
                scaled.push((k, gap(k) as f64 / sqrt_n));
                for i in k + 1..=top {
                    scaled.push((i, state.level(i) as f64 / sqrt_n));
                }
            }
        }
        DiffusionSnapshot {
            time,
            scaled,
            y: state.total_tasks() as i64,
            d_plus,
            d_minus,
            z2,
        }
    }

    /// `(zeta1, zeta2) = (Z1, Z2) / sqrt N`.
    pub fn zeta(&self, snap: &DiffusionSnapshot) -> (f64, f64) {
        let sqrt_n = (self.pools as f64).sqrt();
        (snap.d_plus as f64 / sqrt_n, snap.z2 as f64 / sqrt_n)
    }
}

/// Scales every state of a recorded trajectory.
pub fn diffusion_scale(trajectory: &Trajectory, regime: Regime) -> Result<Vec<DiffusionSnapshot>> {
    let scaler = DiffusionScaler::new(&trajectory.params, regime)?;
    let mut out = Vec::with_capacity(trajectory.events.len() + 1);
    trajectory.replay(|t, _, s| out.push(scaler.scale(t, s)));
    Ok(out)
}
