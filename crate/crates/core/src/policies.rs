//! Assignment rules.
//!
//! Every rule here decides on an *ordered rank*: pools are sorted by task
//! count, ties broken by a fixed pool order, and rank 1 is the least loaded.
//! Since ordered sizes are nondecreasing in rank, the least-loaded pool among
//! a sample is always the sampled pool of smallest rank. Joining rank `c`
//! increments `Q` at level `size(c) + 1`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{out_of_range, Error, Result};
use crate::model::{GrowthSpec, OccupancyState};
use crate::rng::open01;

/// Outcome of routing one arrival.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Assignment {
    /// Join the pool at `rank`, which held `size` tasks.
    Join { rank: usize, size: usize },
    /// The chosen pool at `rank` is already at capacity; the task is lost.
    Overflow { rank: usize },
}

impl Assignment {
    pub fn rank(&self) -> usize {
        match *self {
            Assignment::Join { rank, .. } | Assignment::Overflow { rank } => rank,
        }
    }

    pub fn is_overflow(&self) -> bool {
        matches!(self, Assignment::Overflow { .. })
    }

    fn at_rank(state: &OccupancyState, rank: usize) -> Self {
        let size = state.size_at_rank(rank);
        if state.buffer().admits(size) {
            Assignment::Join { rank, size }
        } else {
            Assignment::Overflow { rank }
        }
    }
}

/// Smallest rank among `d` uniformly sampled pool ranks out of `pools`,
/// obtained by inverting its survival function at `v` in (0, 1).
///
/// With replacement `P(min > k) = (1 - k/N)^d`; without replacement
/// `P(min > k) = C(N - k, d) / C(N, d)`. The smallest `k` with
/// `P(min > k) <= v` is returned, so a larger `v` gives a smaller rank.
pub fn min_sampled_rank(pools: usize, d: usize, with_replacement: bool, v: f64) -> usize {
    debug_assert!(d >= 1 && (with_replacement || d <= pools));
    let n = pools as f64;
    if with_replacement {
        // 1 - v^(1/d), computed without cancellation for large d
        let gap = -(v.ln() / d as f64).exp_m1();
        let mut k = (n * gap).ceil().clamp(1.0, n) as usize;
        // guard the floating-point boundary on both sides
        let survival = |k: usize| (1.0 - k as f64 / n).powi(d as i32);
        while k > 1 && survival(k - 1) <= v {
            k -= 1;
        }
        while k < pools && survival(k) > v {
            k += 1;
        }
        k
    } else {
        let mut survival = 1.0;
        for k in 1..=pools {
            let remaining = pools as i64 - k as i64 - d as i64 + 1;
            survival = if remaining <= 0 {
                0.0
            } else {
                survival * remaining as f64 / (pools - k + 1) as f64
            };
            if survival <= v {
                return k;
            }
        }
        pools
    }
}

/// Exact law of [`min_sampled_rank`] under a uniform `v`: entry `k - 1` is `P(min = k)`.
pub fn min_sampled_rank_law(pools: usize, d: usize, with_replacement: bool) -> Vec<f64> {
    let n = pools as f64;
    let mut law = Vec::with_capacity(pools);
    let mut prev = 1.0;
    let mut survival = 1.0;
    for k in 1..=pools {
        if with_replacement {
            survival = (1.0 - k as f64 / n).powi(d as i32);
        } else {
            let remaining = pools as i64 - k as i64 - d as i64 + 1;
            survival = if remaining <= 0 {
                0.0
            } else {
                survival * remaining as f64 / (pools - k + 1) as f64
            };
        }
        law.push(prev - survival);
        prev = survival;
    }
    law
}

fn check_d(state: &OccupancyState, d: usize) -> Result<()> {
    if d == 0 || d > state.pools() {
        return Err(out_of_range("sample size d", d, format!("1..={}", state.pools())));
    }
    Ok(())
}

fn check_n(state: &OccupancyState, n: usize) -> Result<()> {
    if n >= state.pools() {
        return Err(out_of_range("sloppiness n", n, format!("0..={}", state.pools() - 1)));
    }
    Ok(())
}

/// Join the shortest queue: always the least-loaded pool.
pub fn select_jsq<R: Rng + ?Sized>(state: &OccupancyState, _rng: &mut R) -> Assignment {
    Assignment::at_rank(state, 1)
}

/// Least-loaded pool among `d` sampled pools.
pub fn select_jsq_d<R: Rng + ?Sized>(
    state: &OccupancyState,
    d: usize,
    with_replacement: bool,
    rng: &mut R,
) -> Result<Assignment> {
    check_d(state, d)?;
    Ok(jsq_d(state, d, with_replacement, rng))
}

fn jsq_d<R: Rng + ?Sized>(state: &OccupancyState, d: usize, with_replacement: bool, rng: &mut R) -> Assignment {
    let rank = min_sampled_rank(state.pools(), d, with_replacement, open01(rng));
    Assignment::at_rank(state, rank)
}

/// Uniformly random pool among the `n + 1` least loaded.
pub fn select_cjsq_uniform<R: Rng + ?Sized>(state: &OccupancyState, n: usize, rng: &mut R) -> Result<Assignment> {
    check_n(state, n)?;
    Ok(cjsq_uniform(state, n, rng))
}

fn cjsq_uniform<R: Rng + ?Sized>(state: &OccupancyState, n: usize, rng: &mut R) -> Assignment {
    Assignment::at_rank(state, rng.random_range(1..=n + 1))
}

/// JSQ(d) when the sample hits one of the `n + 1` least-loaded pools, else a
/// uniform pick among those `n + 1`.
pub fn select_jsq_n_d<R: Rng + ?Sized>(
    state: &OccupancyState,
    n: usize,
    d: usize,
    with_replacement: bool,
    rng: &mut R,
) -> Result<Assignment> {
    check_n(state, n)?;
    check_d(state, d)?;
    Ok(jsq_n_d(state, n, d, with_replacement, rng))
}

fn jsq_n_d<R: Rng + ?Sized>(state: &OccupancyState, n: usize, d: usize, with_replacement: bool, rng: &mut R) -> Assignment {
    let sampled = min_sampled_rank(state.pools(), d, with_replacement, open01(rng));
    let rank = if sampled <= n + 1 {
        sampled
    } else {
        rng.random_range(1..=n + 1)
    };
    Assignment::at_rank(state, rank)
}

pub fn select_random<R: Rng + ?Sized>(state: &OccupancyState, rng: &mut R) -> Assignment {
    Assignment::at_rank(state, rng.random_range(1..=state.pools()))
}

/// A policy as configured, with size-dependent parameters unevaluated.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    Jsq,
    JsqD { d: GrowthSpec, with_replacement: bool },
    CjsqUniform { n: GrowthSpec },
    JsqNd { n: GrowthSpec, d: GrowthSpec, with_replacement: bool },
    Random,
}

impl PolicySpec {
    pub const GRAMMAR: &'static str = "jsq | jsqd:d=<g>[,replace=false] | cjsq:n=<g> | jsqnd:n=<g>,d=<g>[,replace=false] | random  \
         where <g> is an integer, log, sqrt, sqrtlog, sqrt/log, sqrtlog2, N, <c>*<g> or table:N1=v1;N2=v2";

    pub fn jsq_d(d: usize) -> Self {
        PolicySpec::JsqD {
            d: GrowthSpec::Const(d as f64),
            with_replacement: true,
        }
    }

    pub fn cjsq(n: usize) -> Self {
        PolicySpec::CjsqUniform {
            n: GrowthSpec::Const(n as f64),
        }
    }

    pub fn jsq_n_d(n: usize, d: usize) -> Self {
        PolicySpec::JsqNd {
            n: GrowthSpec::Const(n as f64),
            d: GrowthSpec::Const(d as f64),
            with_replacement: true,
        }
    }

    /// Evaluates growth parameters at `pools`.
    pub fn resolve(&self, pools: usize) -> Result<Policy> {
        Ok(match self {
            PolicySpec::Jsq => Policy::Jsq,
            PolicySpec::JsqD { d, with_replacement } => Policy::JsqD {
                d: d.sample_size(pools)?,
                with_replacement: *with_replacement,
            },
            PolicySpec::CjsqUniform { n } => Policy::Cjsq {
                n: n.sloppiness(pools)?,
            },
            PolicySpec::JsqNd { n, d, with_replacement } => Policy::JsqNd {
                n: n.sloppiness(pools)?,
                d: d.sample_size(pools)?,
                with_replacement: *with_replacement,
            },
            PolicySpec::Random => Policy::Random,
        })
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let replace = |w: bool| if w { "" } else { ",replace=false" };
        match self {
            PolicySpec::Jsq => f.write_str("jsq"),
            PolicySpec::JsqD { d, with_replacement } => write!(f, "jsqd:d={d}{}", replace(*with_replacement)),
            PolicySpec::CjsqUniform { n } => write!(f, "cjsq:n={n}"),
            PolicySpec::JsqNd { n, d, with_replacement } => {
                write!(f, "jsqnd:n={n},d={d}{}", replace(*with_replacement))
            }
            PolicySpec::Random => f.write_str("random"),
        }
    }
}

impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let usage = |msg: String| Error::Parse(format!("{msg}; policy grammar: {}", PolicySpec::GRAMMAR));
        let s = s.trim();
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        let mut n = None;
        let mut d = None;
        let mut with_replacement = true;
        for kv in args.split(',').map(str::trim).filter(|kv| !kv.is_empty()) {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| usage(format!("argument '{kv}' lacks '='")))?;
            match key.trim() {
                "n" => n = Some(value.parse::<GrowthSpec>().map_err(|e| usage(e.to_string()))?),
                "d" => d = Some(value.parse::<GrowthSpec>().map_err(|e| usage(e.to_string()))?),
                "replace" => {
                    with_replacement = value
                        .trim()
                        .parse()
                        .map_err(|_| usage(format!("replace='{value}' is not a bool")))?
                }
                other => return Err(usage(format!("unknown policy argument '{other}'"))),
            }
        }
        let need = |x: Option<GrowthSpec>, key: &str| x.ok_or_else(|| usage(format!("policy '{name}' needs {key}=")));
        let spec = match name.to_ascii_lowercase().as_str() {
            "jsq" => PolicySpec::Jsq,
            "random" => PolicySpec::Random,
            "jsqd" => PolicySpec::JsqD {
                d: need(d.take(), "d")?,
                with_replacement,
            },
            "cjsq" => PolicySpec::CjsqUniform { n: need(n.take(), "n")? },
            "jsqnd" => PolicySpec::JsqNd {
                n: need(n.take(), "n")?,
                d: need(d.take(), "d")?,
                with_replacement,
            },
            other => return Err(usage(format!("unknown policy '{other}'"))),
        };
        if n.is_some() || d.is_some() {
            return Err(usage(format!("superfluous argument for '{name}'")));
        }
        Ok(spec)
    }
}

/// A policy with its parameters evaluated for a fixed number of pools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    Jsq,
    JsqD { d: usize, with_replacement: bool },
    Cjsq { n: usize },
    JsqNd { n: usize, d: usize, with_replacement: bool },
    Random,
}

impl Policy {
    /// Checks the parameters against the number of pools.
    pub fn validate(&self, pools: usize) -> Result<()> {
        let probe = OccupancyState::empty(pools, crate::model::Buffer::Unbounded)?;
        match *self {
            Policy::JsqD { d, .. } => check_d(&probe, d),
            Policy::Cjsq { n } => check_n(&probe, n),
            Policy::JsqNd { n, d, .. } => {
                check_n(&probe, n)?;
                check_d(&probe, d)
            }
            Policy::Jsq | Policy::Random => Ok(()),
        }
    }

    /// Routes one arrival. Parameters must have passed [`Policy::validate`].
    pub fn select<R: Rng + ?Sized>(&self, state: &OccupancyState, rng: &mut R) -> Assignment {
        match *self {
            Policy::Jsq => select_jsq(state, rng),
            Policy::JsqD { d, with_replacement } => jsq_d(state, d, with_replacement, rng),
            Policy::Cjsq { n } => cjsq_uniform(state, n, rng),
            Policy::JsqNd { n, d, with_replacement } => jsq_n_d(state, n, d, with_replacement, rng),
            Policy::Random => select_random(state, rng),
        }
    }

    /// Exact distribution of the chosen rank; entry `c - 1` is `P(rank = c)`.
    /// Every shipped policy decides on ranks independently of the state.
    pub fn rank_law(&self, pools: usize) -> Vec<f64> {
        let mut law = vec![0.0; pools];
        match *self {
            Policy::Jsq => law[0] = 1.0,
            Policy::JsqD { d, with_replacement } => law = min_sampled_rank_law(pools, d, with_replacement),
            Policy::Cjsq { n } => law[..=n].fill(1.0 / (n + 1) as f64),
            Policy::JsqNd { n, d, with_replacement } => {
                let sampled = min_sampled_rank_law(pools, d, with_replacement);
                let miss: f64 = sampled[n + 1..].iter().sum();
                for c in 0..=n {
                    law[c] = sampled[c] + miss / (n + 1) as f64;
                }
            }
            Policy::Random => law.fill(1.0 / pools as f64),
        }
        law
    }

    /// Whether every decision lies among the `n + 1` least-loaded ranks, i.e. the
    /// policy belongs to the CJSQ(n) class.
    pub fn cjsq_sloppiness(&self) -> Option<usize> {
        match *self {
            Policy::Jsq => Some(0),
            Policy::Cjsq { n } | Policy::JsqNd { n, .. } => Some(n),
            _ => None,
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Jsq => f.write_str("jsq"),
            Policy::JsqD { d, with_replacement: true } => write!(f, "jsqd:d={d}"),
            Policy::JsqD { d, with_replacement: false } => write!(f, "jsqd:d={d},replace=false"),
            Policy::Cjsq { n } => write!(f, "cjsq:n={n}"),
            Policy::JsqNd { n, d, with_replacement: true } => write!(f, "jsqnd:n={n},d={d}"),
            Policy::JsqNd { n, d, with_replacement: false } => write!(f, "jsqnd:n={n},d={d},replace=false"),
            Policy::Random => f.write_str("random"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Buffer;
    use crate::rng::seeded;
    use rand::seq::index::sample;

    fn state(pools: usize, b: usize, q: &[usize]) -> OccupancyState {
        OccupancyState::new(pools, Buffer::Finite(b), q.to_vec()).unwrap()
    }

    /// Chi-square statistic against `expected` probabilities, accepted at mean + 3 sd.
    fn chi_square_ok(counts: &[u64], expected: &[f64]) -> bool {
        let total: u64 = counts.iter().sum();
        let mut stat = 0.0;
        let mut cells = 0usize;
        for (&c, &p) in counts.iter().zip(expected) {
            if p > 0.0 {
                let e = p * total as f64;
                stat += (c as f64 - e).powi(2) / e;
                cells += 1;
            } else if c > 0 {
                return false;
            }
        }
        let dof = cells.saturating_sub(1).max(1) as f64;
        stat < dof + 3.0 * (2.0 * dof).sqrt()
    }

    #[test]
    fn jsq_examples() {
        let mut rng = seeded(0);
        assert_eq!(select_jsq(&state(3, 3, &[3, 1, 0]), &mut rng), Assignment::Join { rank: 1, size: 1 });
        assert_eq!(select_jsq(&state(3, 3, &[0, 0, 0]), &mut rng), Assignment::Join { rank: 1, size: 0 });
        assert_eq!(select_jsq(&state(2, 2, &[2, 2]), &mut rng), Assignment::Overflow { rank: 1 });
    }

    #[test]
    fn jsq_d_full_scan_matches_jsq() {
        let mut rng = seeded(3);
        for s in crate::analytics::enumerate_states(6, 3) {
            let full = select_jsq_d(&s, 6, false, &mut rng).unwrap();
            assert_eq!(full, select_jsq(&s, &mut rng));
        }
    }

    #[test]
    fn jsq_d_rejects_bad_d() {
        let mut rng = seeded(0);
        let s = state(3, 2, &[0, 0]);
        assert!(select_jsq_d(&s, 0, true, &mut rng).is_err());
        assert!(select_jsq_d(&s, 4, false, &mut rng).is_err());
        assert!(select_cjsq_uniform(&s, 3, &mut rng).is_err());
    }

    #[test]
    fn jsq_1_is_uniform_over_ranks() {
        // ordered sizes of Q=(3,1,0) are (1,1,2)
        let s = state(3, 3, &[3, 1, 0]);
        let mut rng = seeded(11);
        let mut rank_counts = [0u64; 3];
        let mut size_counts = [0u64; 3];
        for _ in 0..60_000 {
            let a = select_jsq_d(&s, 1, true, &mut rng).unwrap();
            rank_counts[a.rank() - 1] += 1;
            if let Assignment::Join { size, .. } = a {
                size_counts[size] += 1;
            }
        }
        assert!(chi_square_ok(&rank_counts, &[1.0 / 3.0; 3]));
        assert!(chi_square_ok(&size_counts, &[0.0, 2.0 / 3.0, 1.0 / 3.0]));
    }

    #[test]
    fn inverted_min_rank_matches_explicit_sampling() {
        // oracle: sample d ranks explicitly and take the minimum
        let mut rng = seeded(5);
        for &(pools, d, repl) in &[(10usize, 3usize, true), (10, 3, false), (7, 7, false), (50, 12, true), (5, 1, true)] {
            let mut fast = vec![0u64; pools];
            let mut brute = vec![0u64; pools];
            let trials = 40_000;
            for _ in 0..trials {
                fast[min_sampled_rank(pools, d, repl, open01(&mut rng)) - 1] += 1;
                let m = if repl {
                    (0..d).map(|_| rng.random_range(1..=pools)).min().unwrap()
                } else {
                    sample(&mut rng, pools, d).iter().min().unwrap() + 1
                };
                brute[m - 1] += 1;
            }
            let law = min_sampled_rank_law(pools, d, repl);
            assert!((law.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(chi_square_ok(&fast, &law), "inverted sampler N={pools} d={d} repl={repl}");
            assert!(chi_square_ok(&brute, &law), "explicit sampler N={pools} d={d} repl={repl}");
        }
    }

    #[test]
    fn min_rank_monotone_in_v() {
        for &repl in &[true, false] {
            let mut prev = usize::MAX;
            for i in 1..1000 {
                let k = min_sampled_rank(100, 20, repl, i as f64 / 1000.0);
                assert!(k <= prev);
                prev = k;
            }
        }
    }

    #[test]
    fn sampling_miss_probability() {
        // P(no sampled rank among the lowest n+1) = (1 - (n+1)/N)^d
        let (pools, n, d) = (100, 9, 20);
        let p = 0.9f64.powi(20);
        let s = OccupancyState::empty(pools, Buffer::Unbounded).unwrap();
        let mut rng = seeded(17);
        let trials = 100_000;
        let misses = (0..trials)
            .filter(|_| select_jsq_d(&s, d, true, &mut rng).unwrap().rank() > n + 1)
            .count();
        let sd = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((misses as f64 / trials as f64 - p).abs() < 3.0 * sd);
    }

    #[test]
    fn cjsq_degenerate_and_uniform() {
        let mut rng = seeded(2);
        for s in crate::analytics::enumerate_states(4, 2) {
            assert_eq!(select_cjsq_uniform(&s, 0, &mut rng).unwrap(), select_jsq(&s, &mut rng));
        }
        let s = OccupancyState::empty(10, Buffer::Unbounded).unwrap();
        let mut counts = [0u64; 3];
        for _ in 0..100_000 {
            let r = select_cjsq_uniform(&s, 2, &mut rng).unwrap().rank();
            assert!(r <= 3);
            counts[r - 1] += 1;
        }
        assert!(chi_square_ok(&counts, &[1.0 / 3.0; 3]));
        let mut all = [0u64; 10];
        for _ in 0..50_000 {
            all[select_cjsq_uniform(&s, 9, &mut rng).unwrap().rank() - 1] += 1;
        }
        assert!(chi_square_ok(&all, &[0.1; 10]));
    }

    #[test]
    fn jsq_n_d_degenerate_cases() {
        let mut rng_a = seeded(9);
        let mut rng_b = seeded(9);
        let mut rng_c = seeded(10);
        for s in crate::analytics::enumerate_states(5, 3) {
            // n = N - 1: fallback never triggers
            assert_eq!(
                select_jsq_n_d(&s, 4, 2, true, &mut rng_a).unwrap(),
                select_jsq_d(&s, 2, true, &mut rng_b).unwrap()
            );
            // d = N without replacement: rank 1 always sampled
            assert_eq!(select_jsq_n_d(&s, 1, 5, false, &mut rng_c).unwrap(), select_jsq(&s, &mut rng_c));
        }
    }

    #[test]
    fn jsq_n_d_differs_from_jsq_d_at_miss_rate() {
        let (pools, n, d) = (100, 9, 20);
        let s = OccupancyState::empty(pools, Buffer::Unbounded).unwrap();
        let mut rng = seeded(23);
        let trials = 100_000;
        let mut differ = 0;
        for _ in 0..trials {
            let sub: u64 = rng.random();
            let mut ra = seeded(sub);
            let mut rb = seeded(sub);
            let a = select_jsq_d(&s, d, true, &mut ra).unwrap();
            let b = select_jsq_n_d(&s, n, d, true, &mut rb).unwrap();
            assert!(b.rank() <= n + 1);
            if a.rank() != b.rank() {
                differ += 1;
            }
        }
        let p = 0.9f64.powi(20);
        let sd = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((differ as f64 / trials as f64 - p).abs() < 3.0 * sd);
    }

    #[test]
    fn rank_laws_match_empirical_choices() {
        let s = state(6, 2, &[4, 1]);
        let mut rng = seeded(31);
        for policy in [
            Policy::Jsq,
            Policy::JsqD { d: 2, with_replacement: true },
            Policy::JsqD { d: 3, with_replacement: false },
            Policy::Cjsq { n: 2 },
            Policy::JsqNd { n: 1, d: 2, with_replacement: true },
            Policy::Random,
        ] {
            let mut counts = vec![0u64; 6];
            for _ in 0..60_000 {
                counts[policy.select(&s, &mut rng).rank() - 1] += 1;
            }
            let law = policy.rank_law(6);
            assert!((law.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(chi_square_ok(&counts, &law), "{policy}");
        }
    }

    #[test]
    fn policy_grammar() {
        for s in ["jsq", "jsqd:d=sqrt", "cjsq:n=16", "jsqnd:n=16,d=log", "random", "jsqd:d=20,replace=false"] {
            let p: PolicySpec = s.parse().unwrap();
            assert_eq!(p.to_string(), s);
        }
        let p: PolicySpec = "jsqnd:n=16,d=log".parse().unwrap();
        assert_eq!(
            p.resolve(10_000).unwrap(),
            Policy::JsqNd { n: 16, d: 10, with_replacement: true }
        );
        for bad in ["jsqd", "cjsq:d=3", "foo", "jsqd:d=", "jsq:n=3"] {
            let err = bad.parse::<PolicySpec>().unwrap_err().to_string();
            assert!(err.contains("grammar"), "{bad}: {err}");
        }
    }

    #[test]
    fn decisions_preserve_state_invariants() {
        let mut rng = seeded(41);
        for s in crate::analytics::enumerate_states(4, 3) {
            for policy in [Policy::Jsq, Policy::JsqD { d: 2, with_replacement: true }, Policy::Cjsq { n: 3 }, Policy::Random] {
                if let Assignment::Join { size, .. } = policy.select(&s, &mut rng) {
                    let mut next = s.clone();
                    next.add_task(size);
                    next.check_invariants().unwrap();
                }
            }
        }
    }
}
