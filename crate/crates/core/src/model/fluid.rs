use crate::error::{Error, Result};

use super::{Buffer, OccupancyState, ServiceMode};

/// Tolerance for treating a fluid level as full when computing `m(q)`.
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// Fluid-scaled occupancy `q_i = Q_i / N`, nonincreasing in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidState {
    q: Vec<f64>,
    buffer: Buffer,
}

impl FluidState {
    pub fn new(q: Vec<f64>, buffer: Buffer) -> Result<Self> {
        if let Buffer::Finite(b) = buffer {
            if q.len() != b {
                return Err(Error::InvalidState(format!(
                    "fluid state has {} levels for buffer {b}",
                    q.len()
                )));
            }
        }
        let mut prev = 1.0;
        for (i, &x) in q.iter().enumerate() {
            if !(0.0..=prev).contains(&x) {
                return Err(Error::InvalidState(format!(
                    "q_{} = {x} outside [0, {prev}]",
                    i + 1
                )));
            }
            prev = x;
        }
        Ok(FluidState { q, buffer })
    }

    pub fn zeros(levels: usize, buffer: Buffer) -> Self {
        FluidState {
            q: vec![0.0; levels],
            buffer,
        }
    }

    pub fn from_occupancy(state: &OccupancyState) -> Self {
        let n = state.pools() as f64;
        FluidState {
            q: state.counts().iter().map(|&c| c as f64 / n).collect(),
            buffer: state.buffer(),
        }
    }

    pub(crate) fn from_raw(q: Vec<f64>, buffer: Buffer) -> Self {
        FluidState { q, buffer }
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }

    pub fn buffer(&self) -> Buffer {
        self.buffer
    }

    pub fn levels(&self) -> usize {
        self.q.len()
    }

    /// `q_i` for 1-based `i`, with `q_0 = 1` and zero past the stored levels.
    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        if i == 0 {
            1.0
        } else {
            self.q.get(i - 1).copied().unwrap_or(0.0)
        }
    }

    pub fn total(&self) -> f64 {
        self.q.iter().sum()
    }

    /// `m(q)`: the smallest `i >= 0` with `q_{i+1} < 1`, i.e. the minimum
    /// number of tasks over pools holding positive fluid mass.
    pub fn min_active_level(&self) -> usize {
        self.q
            .iter()
            .position(|&x| x < 1.0 - UNIT_TOLERANCE)
            .unwrap_or(self.q.len())
    }

    /// Product-topology metric `sum_i |q1_i - q2_i| / 2^i`.
    pub fn distance(&self, other: &FluidState) -> f64 {
        let levels = self.q.len().max(other.q.len());
        let mut weight = 1.0;
        let mut acc = 0.0;
        for i in 1..=levels {
            weight *= 0.5;
            acc += (self.get(i) - other.get(i)).abs() * weight;
        }
        acc
    }

    /// Max-norm distance over levels.
    pub fn sup_distance(&self, other: &FluidState) -> f64 {
        let levels = self.q.len().max(other.q.len());
        (1..=levels)
            .map(|i| (self.get(i) - other.get(i)).abs())
            .fold(0.0, f64::max)
    }

    /// Fluid departure rate out of level `i`.
    pub fn level_rate(&self, i: usize, mode: ServiceMode) -> f64 {
        if i == 0 {
            return 0.0;
        }
        mode.level_rate(i, (self.get(i) - self.get(i + 1)).max(0.0))
    }
}

/// Fractions `p_0, ..., p_L` of arrivals joining pools with exactly `i` tasks,
/// where `L` is the number of stored levels; for a finite buffer `p_B` is the
/// overflow fraction.
pub fn assignment_fractions(q: &FluidState, lambda: f64, mode: ServiceMode) -> Vec<f64> {
    let mut p = vec![0.0; q.levels() + 1];
    let m = q.min_active_level();
    if m == 0 {
        p[0] = 1.0;
        return p;
    }
    let mu = q.level_rate(m, mode);
    if lambda <= mu {
        p[m - 1] = 1.0;
    } else {
        p[m - 1] = mu / lambda;
        p[m] = 1.0 - p[m - 1];
    }
    p
}
