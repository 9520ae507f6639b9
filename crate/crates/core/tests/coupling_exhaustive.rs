use std::collections::{HashSet, VecDeque};

use poold::coupling::{coupled_arrival_at, coupled_departure, CoupledState, IndexOrder};
use poold::model::{Buffer, OccupancyState};

/// Every state reachable from the empty pair under JSQ vs CJSQ(n), with the
/// first transition that breaks the k-prefix bounds, if any.
fn explore(pools: usize, buffer: usize, n: usize, order: IndexOrder) -> (usize, Option<String>) {
    let empty = OccupancyState::empty(pools, Buffer::Finite(buffer)).unwrap();
    let start = CoupledState::new(empty.clone(), empty).unwrap();
    let key = |s: &CoupledState| (s.a.clone(), s.b.clone());
    let mut seen = HashSet::new();
    seen.insert(key(&start));
    let mut queue = VecDeque::from([start]);
    while let Some(s) = queue.pop_front() {
        let mut next = Vec::new();
        for rb in 1..=n + 1 {
            let mut t = s.clone();
            coupled_arrival_at(&mut t, 1, rb).unwrap();
            next.push(t);
        }
        let m = s.clock_rate();
        let h = s.shared();
        for r in 0..h {
            let mut t = s.clone();
            coupled_departure(&mut t, 0.0, (r as f64 + 0.5) / h as f64, order).unwrap();
            next.push(t);
        }
        for j in 0..m - h {
            let mut t = s.clone();
            coupled_departure(&mut t, 1.0 - 1e-12, (j as f64 + 0.5) / (m - h) as f64, order).unwrap();
            next.push(t);
        }
        for t in next {
            if let Some(k) = prefix_violation(&t, n, buffer) {
                return (
                    seen.len(),
                    Some(format!("{:?}/{:?} -> {:?}/{:?} at k={k}", s.a.counts(), s.b.counts(), t.a.counts(), t.b.counts())),
                );
            }
            if seen.insert(key(&t)) {
                queue.push_back(t);
            }
        }
    }
    (seen.len(), None)
}

fn prefix_violation(s: &CoupledState, n: usize, buffer: usize) -> Option<usize> {
    let (mut sa, mut sb) = (0i64, 0i64);
    for k in 1..=buffer {
        sa += s.a.level(k) as i64;
        sb += s.b.level(k) as i64;
        if sa - (k * n) as i64 > sb || sb > sa {
            return Some(k);
        }
    }
    None
}

#[test]
fn prefix_bounds_hold_for_jsq_against_itself() {
    for (pools, buffer) in [(2, 2), (3, 3), (4, 3), (5, 3), (6, 2)] {
        let (_, bad) = explore(pools, buffer, 0, IndexOrder::RankMajor);
        assert_eq!(bad, None, "N={pools} B={buffer}");
    }
}

#[test]
fn prefix_bounds_can_break_far_from_jsq() {
    // A green departure at a rank where A holds two tasks and B one lowers
    // Q_2 in A but Q_1 in B.
    for order in [IndexOrder::RankMajor, IndexOrder::LevelMajor] {
        let (_, bad) = explore(2, 2, 1, order);
        assert_eq!(bad.as_deref(), Some("[2, 1]/[1, 0] -> [2, 0]/[0, 0] at k=1"));
    }
    let a = OccupancyState::new(2, Buffer::Finite(2), vec![2, 1]).unwrap();
    let b = OccupancyState::new(2, Buffer::Finite(2), vec![1, 0]).unwrap();
    let mut s = CoupledState::new(a, b).unwrap();
    assert_eq!(s.shared(), 1);
    coupled_departure(&mut s, 0.0, 0.5, IndexOrder::RankMajor).unwrap();
    assert_eq!((s.a.counts(), s.b.counts()), (&[2usize, 0][..], &[0usize, 0][..]));
}

#[test]
fn gap_grows_only_with_differing_decisions() {
    for (pools, buffer) in [(3, 3), (4, 3), (5, 2)] {
        let states = poold::analytics::enumerate_states(pools, buffer);
        for a in &states {
            for b in &states {
                let s = CoupledState::new(a.clone(), b.clone()).unwrap();
                let before = s.sum_abs_diff();
                for ra in 1..=pools {
                    for rb in 1..=pools {
                        let mut t = s.clone();
                        coupled_arrival_at(&mut t, ra, rb).unwrap();
                        let bound = if ra == rb { before } else { before + 2 };
                        assert!(t.sum_abs_diff() <= bound, "{:?} {:?} ranks {ra},{rb}", a.counts(), b.counts());
                        assert_eq!(t.delta, u64::from(ra != rb));
                    }
                }
            }
        }
    }
}
