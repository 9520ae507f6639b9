use std::fmt;
use std::str::FromStr;

use crate::error::{out_of_range, Error, Result};

/// Per-pool task capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Buffer {
    Finite(usize),
    Unbounded,
}

impl Buffer {
    pub fn capacity(self) -> Option<usize> {
        match self {
            Buffer::Finite(b) => Some(b),
            Buffer::Unbounded => None,
        }
    }

    /// Whether a pool currently holding `size` tasks can take one more.
    #[inline]
    pub fn admits(self, size: usize) -> bool {
        match self {
            Buffer::Finite(b) => size < b,
            Buffer::Unbounded => true,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Buffer::Finite(_))
    }
}

impl fmt::Display for Buffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Buffer::Finite(b) => write!(f, "{b}"),
            Buffer::Unbounded => f.write_str("inf"),
        }
    }
}

impl FromStr for Buffer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "inf" | "unbounded" | "infinity" => Ok(Buffer::Unbounded),
            other => {
                let b: usize = other
                    .parse()
                    .map_err(|_| Error::Parse(format!("buffer '{s}' is neither an integer nor 'inf'")))?;
                if b == 0 {
                    return Err(out_of_range("buffer", b, ">= 1"));
                }
                Ok(Buffer::Finite(b))
            }
        }
    }
}

/// Occupancy counts `Q_i` = number of pools holding at least `i` tasks.
///
/// For a finite buffer the stored sequence has exactly `B` entries. For an
/// unbounded buffer trailing zeros are trimmed, so a level past the stored
/// length is logically zero and derived equality is logical equality.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OccupancyState {
    pools: usize,
    buffer: Buffer,
    counts: Vec<usize>,
}

impl OccupancyState {
    pub fn empty(pools: usize, buffer: Buffer) -> Result<Self> {
        Self::new(pools, buffer, Vec::new())
    }

    pub fn new(pools: usize, buffer: Buffer, mut counts: Vec<usize>) -> Result<Self> {
        if pools == 0 {
            return Err(out_of_range("pools", 0, ">= 1"));
        }
        match buffer {
            Buffer::Finite(0) => return Err(out_of_range("buffer", 0, ">= 1")),
            Buffer::Finite(b) => {
                if counts.len() > b {
                    if counts[b..].iter().any(|&q| q != 0) {
                        return Err(Error::InvalidState(format!(
                            "nonzero occupancy above buffer level {b}"
                        )));
                    }
                    counts.truncate(b);
                }
                counts.resize(b, 0);
            }
            Buffer::Unbounded => {
                while counts.last() == Some(&0) {
                    counts.pop();
                }
            }
        }
        let state = OccupancyState {
            pools,
            buffer,
            counts,
        };
        state.check_invariants()?;
        Ok(state)
    }

    /// Builds the occupancy view of explicit per-pool task counts.
    pub fn from_pool_sizes(sizes: &[usize], buffer: Buffer) -> Result<Self> {
        if let Buffer::Finite(b) = buffer {
            if let Some(&s) = sizes.iter().find(|&&s| s > b) {
                return Err(out_of_range("pool size", s, format!("<= buffer {b}")));
            }
        }
        let top = sizes.iter().copied().max().unwrap_or(0);
        let mut counts = vec![0usize; top];
        for &s in sizes {
            for q in &mut counts[..s] {
                *q += 1;
            }
        }
        Self::new(sizes.len(), buffer, counts)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let mut prev = self.pools;
        for (idx, &q) in self.counts.iter().enumerate() {
            if q > prev {
                return Err(Error::InvalidState(format!(
                    "Q_{} = {q} exceeds {} = {prev}",
                    idx + 1,
                    if idx == 0 { "N".to_string() } else { format!("Q_{idx}") }
                )));
            }
            prev = q;
        }
        if let Buffer::Finite(b) = self.buffer {
            if self.counts.len() != b {
                return Err(Error::InvalidState(format!(
                    "stored {} levels for buffer {b}",
                    self.counts.len()
                )));
            }
        } else if self.counts.last() == Some(&0) {
            return Err(Error::InvalidState("untrimmed unbounded state".into()));
        }
        Ok(())
    }

    pub fn pools(&self) -> usize {
        self.pools
    }

    pub fn buffer(&self) -> Buffer {
        self.buffer
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Number of stored levels: `B` when finite, the highest occupied level otherwise.
    pub fn levels(&self) -> usize {
        self.counts.len()
    }

    /// `Q_i` for 1-based `i`; level 0 is `N` and anything past the stored range is 0.
    #[inline]
    pub fn level(&self, i: usize) -> usize {
        if i == 0 {
            self.pools
        } else {
            self.counts.get(i - 1).copied().unwrap_or(0)
        }
    }

    /// Number of pools with exactly `i` tasks.
    #[inline]
    pub fn pools_with_exactly(&self, i: usize) -> usize {
        self.level(i) - self.level(i + 1)
    }

    pub fn total_tasks(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn is_full(&self) -> bool {
        match self.buffer {
            Buffer::Finite(b) => self.level(b) == self.pools,
            Buffer::Unbounded => false,
        }
    }

    /// Task count of the pool at rank `c` in nondecreasing order (`c = 1` is
    /// the least loaded), i.e. `max{i : Q_i >= N - c + 1}`.
    pub fn ordered_pool_size(&self, c: usize) -> Result<usize> {
        if c == 0 || c > self.pools {
            return Err(out_of_range("pool rank", c, format!("1..={}", self.pools)));
        }
        Ok(self.size_at_rank(c))
    }

    #[inline]
    pub(crate) fn size_at_rank(&self, c: usize) -> usize {
        debug_assert!((1..=self.pools).contains(&c));
        let threshold = self.pools + 1 - c;
        // counts is nonincreasing, so the levels with Q_i >= threshold form a prefix
        self.counts.partition_point(|&q| q >= threshold)
    }

    /// Per-pool task counts in rank order (nondecreasing).
    pub fn pool_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.pools);
        for size in 0..=self.counts.len() {
            sizes.extend(std::iter::repeat_n(size, self.pools_with_exactly(size)));
        }
        sizes
    }

    /// A pool holding `size` tasks receives one more.
    pub fn add_task(&mut self, size: usize) {
        debug_assert!(self.buffer.admits(size));
        debug_assert!(self.pools_with_exactly(size) > 0, "no pool with {size} tasks");
        if size == self.counts.len() {
            self.counts.push(0);
        }
        self.counts[size] += 1;
    }

    /// A pool holding `size >= 1` tasks loses one.
    pub fn remove_task(&mut self, size: usize) {
        debug_assert!(size >= 1);
        debug_assert!(self.pools_with_exactly(size) > 0, "no pool with {size} tasks");
        self.counts[size - 1] -= 1;
        if self.buffer == Buffer::Unbounded {
            while self.counts.last() == Some(&0) {
                self.counts.pop();
            }
        }
    }

    /// Departure rates per level: `mu[i-1]` is the rate at which some pool with
    /// exactly `i` tasks completes one.
    pub fn departure_rates(&self, mode: ServiceMode) -> Vec<f64> {
        (1..=self.counts.len())
            .map(|i| mode.level_rate(i, self.pools_with_exactly(i) as f64))
            .collect()
    }

    /// Total departure rate `sum_i mu_i`.
    pub fn total_departure_rate(&self, mode: ServiceMode) -> f64 {
        match mode {
            ServiceMode::InfiniteServer => self.total_tasks() as f64,
            ServiceMode::SingleServer => self.level(1) as f64,
        }
    }
}

impl fmt::Display for OccupancyState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.pools, self.buffer)?;
        for q in &self.counts {
            write!(f, ",{q}")?;
        }
        Ok(())
    }
}

impl FromStr for OccupancyState {
    type Err = Error;

    /// Parses the plain-text record `N,B,Q_1,...,Q_B`.
    fn from_str(s: &str) -> Result<Self> {
        let mut fields = s.trim().split(',').map(str::trim);
        let pools: usize = fields
            .next()
            .filter(|f| !f.is_empty())
            .ok_or_else(|| Error::Parse("missing N".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("N: {e}")))?;
        let buffer: Buffer = fields
            .next()
            .ok_or_else(|| Error::Parse("missing B".into()))?
            .parse()?;
        let counts = fields
            .filter(|f| !f.is_empty())
            .map(|f| f.parse::<usize>().map_err(|e| Error::Parse(format!("Q value '{f}': {e}"))))
            .collect::<Result<Vec<_>>>()?;
        OccupancyState::new(pools, buffer, counts)
    }
}

/// How a pool's departure rate depends on its number of tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ServiceMode {
    /// Every task is served concurrently at unit rate.
    #[default]
    InfiniteServer,
    /// One task at a time at unit rate.
    SingleServer,
}

impl ServiceMode {
    /// Departure rate out of level `i` given the (possibly fractional) mass of
    /// pools with exactly `i` tasks.
    #[inline]
    pub fn level_rate(self, i: usize, exactly: f64) -> f64 {
        match self {
            ServiceMode::InfiniteServer => i as f64 * exactly,
            ServiceMode::SingleServer => {
                if i == 0 {
                    0.0
                } else {
                    exactly
                }
            }
        }
    }
}

impl fmt::Display for ServiceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ServiceMode::InfiniteServer => "infinite",
            ServiceMode::SingleServer => "single",
        })
    }
}

impl FromStr for ServiceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "infinite" | "infinite-server" | "inf" | "mminf" => Ok(ServiceMode::InfiniteServer),
            "single" | "single-server" | "mm1" => Ok(ServiceMode::SingleServer),
            other => Err(Error::Parse(format!(
                "unknown service mode '{other}' (expected 'infinite' or 'single')"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(pools: usize, b: usize, q: &[usize]) -> OccupancyState {
        OccupancyState::new(pools, Buffer::Finite(b), q.to_vec()).unwrap()
    }

    #[test]
    fn from_pool_sizes_examples() {
        let empty = OccupancyState::from_pool_sizes(&[0, 0, 0], Buffer::Finite(2)).unwrap();
        assert_eq!(empty.counts(), &[0, 0]);

        let fig = OccupancyState::from_pool_sizes(
            &[2, 4, 4, 6, 7, 9, 9, 11, 11, 11],
            Buffer::Unbounded,
        )
        .unwrap();
        assert_eq!(fig.level(1), 10);
        assert_eq!(fig.level(2), 10);
        assert_eq!(fig.level(7), 6);

        let small = OccupancyState::from_pool_sizes(&[1, 1, 2], Buffer::Finite(3)).unwrap();
        assert_eq!(small.counts(), &[3, 1, 0]);
    }

    #[test]
    fn from_pool_sizes_rejects_overfull_pool() {
        let err = OccupancyState::from_pool_sizes(&[0, 3], Buffer::Finite(2)).unwrap_err();
        assert!(matches!(err, Error::OutOfRange { .. }));
    }

    #[test]
    fn new_rejects_increasing_counts() {
        assert!(OccupancyState::new(3, Buffer::Finite(3), vec![1, 2, 0]).is_err());
        assert!(OccupancyState::new(3, Buffer::Finite(2), vec![4, 0]).is_err());
        assert!(OccupancyState::new(3, Buffer::Finite(2), vec![3, 0, 1]).is_err());
    }

    #[test]
    fn ordered_pool_size_examples() {
        let s = state(3, 3, &[3, 1, 0]);
        assert_eq!(s.ordered_pool_size(1).unwrap(), 1);
        assert_eq!(s.ordered_pool_size(3).unwrap(), 2);
        let empty = OccupancyState::empty(5, Buffer::Unbounded).unwrap();
        for c in 1..=5 {
            assert_eq!(empty.ordered_pool_size(c).unwrap(), 0);
        }
        let full = state(3, 3, &[3, 3, 3]);
        assert_eq!(full.ordered_pool_size(3).unwrap(), 3);
        assert!(s.ordered_pool_size(0).is_err());
        assert!(s.ordered_pool_size(4).is_err());
    }

    #[test]
    fn departure_rates_examples() {
        let s = state(3, 3, &[3, 1, 0]);
        assert_eq!(s.departure_rates(ServiceMode::InfiniteServer), vec![2.0, 2.0, 0.0]);
        assert_eq!(s.total_departure_rate(ServiceMode::InfiniteServer), 4.0);
        assert_eq!(s.departure_rates(ServiceMode::SingleServer), vec![2.0, 1.0, 0.0]);
        let empty = state(3, 3, &[0, 0, 0]);
        assert!(empty.departure_rates(ServiceMode::InfiniteServer).iter().all(|&m| m == 0.0));
    }

    #[test]
    fn infinite_server_rates_conserve_mass_exhaustively() {
        for n in 1..=4 {
            for b in 1..=3 {
                for s in crate::analytics::enumerate_states(n, b) {
                    let mu: f64 = s.departure_rates(ServiceMode::InfiniteServer).iter().sum();
                    assert_eq!(mu, s.total_tasks() as f64, "state {s}");
                }
            }
        }
    }

    #[test]
    fn text_record_roundtrip() {
        let s = state(10, 5, &[10, 10, 5, 0, 0]);
        assert_eq!(s.to_string(), "10,5,10,10,5,0,0");
        assert_eq!(s.to_string().parse::<OccupancyState>().unwrap(), s);
        let u: OccupancyState = "4,inf,4,2".parse().unwrap();
        assert_eq!(u.buffer(), Buffer::Unbounded);
        assert_eq!(u.level(3), 0);
        assert!("4,2,1,2".parse::<OccupancyState>().is_err());
        assert!("x,2".parse::<OccupancyState>().is_err());
    }

    #[test]
    fn add_and_remove_track_levels() {
        let mut s = OccupancyState::empty(2, Buffer::Unbounded).unwrap();
        s.add_task(0);
        s.add_task(1);
        assert_eq!(s.counts(), &[1, 1]);
        s.remove_task(2);
        s.remove_task(1);
        assert_eq!(s.counts(), &[] as &[usize]);
        assert_eq!(s, OccupancyState::empty(2, Buffer::Unbounded).unwrap());
    }
}
