use poold::analytics::{birth_death_stationary, erlang_b, exact_stationary_small, p_reject};
use poold::coupling::CoupledSimulation;
use poold::engine::{simulate, steady_state, SteadyStateOptions};
use poold::io::{read_trajectory_csv, write_trajectory_csv};
use poold::limits::{diffusion_scale, fluid_fixed_point, integrate_fluid, DiffusionScaler, Regime};
use poold::model::{Buffer, FluidState, OccupancyState, ServiceMode, SystemParams};
use poold::policies::{Policy, PolicySpec};

fn params(pools: usize, buffer: usize, arrival_rate: f64) -> SystemParams {
    SystemParams::new(pools, Buffer::Finite(buffer), arrival_rate, ServiceMode::InfiniteServer).unwrap()
}

/// With one slot per pool, JSQ(d) is a birth-death chain in the busy count
/// `y`: births `lambda N (1 - (y/N)^d)`, deaths `y`.
fn single_slot_loss(pools: usize, arrival_rate: f64, d: usize) -> f64 {
    let n = pools as f64;
    let birth: Vec<f64> = (0..pools).map(|y| arrival_rate * (1.0 - (y as f64 / n).powi(d as i32))).collect();
    let death: Vec<f64> = (1..=pools).map(|y| y as f64).collect();
    let pi = birth_death_stationary(&birth, &death).unwrap();
    pi.iter().enumerate().map(|(y, p)| p * (y as f64 / n).powi(d as i32)).sum()
}

#[test]
fn single_slot_jsq_d_loss_matches_birth_death_chain() {
    let p = params(40, 1, 36.0);
    for d in [1usize, 3, 12] {
        let chain = single_slot_loss(40, 36.0, d);
        let exact = exact_stationary_small(&p, &Policy::JsqD { d, with_replacement: true }).unwrap();
        assert!((exact.loss - chain).abs() < 1e-10, "d={d}: {} vs {chain}", exact.loss);
        let opts = SteadyStateOptions::new(3000.0);
        let r = steady_state(&p, &PolicySpec::jsq_d(d), &opts, 17 + d as u64).unwrap();
        assert!((r.loss - chain).abs() < 4.0 * r.loss_ci_half.max(1e-3), "d={d}: {} +- {} vs {chain}", r.loss, r.loss_ci_half);
    }
    // d = N with replacement is not JSQ, but JSQ itself is the Erlang system
    let jsq = exact_stationary_small(&p, &Policy::Jsq).unwrap();
    assert!((jsq.loss - erlang_b(40, 36.0)).abs() < 1e-10);
}

#[test]
fn fluid_path_and_simulation_reach_the_fixed_point() {
    let target = fluid_fixed_point(2.5, Buffer::Finite(5)).unwrap();
    let path = integrate_fluid(&FluidState::zeros(5, Buffer::Finite(5)), 2.5, ServiceMode::InfiniteServer, 30.0, 1e-3).unwrap();
    assert!(path.terminal().sup_distance(&target) < 1e-3);

    let p = params(2000, 5, 5000.0);
    let r = steady_state(&p, &PolicySpec::Jsq, &SteadyStateOptions::new(50.0), 3).unwrap();
    for i in 1..=5 {
        assert!((r.q_hat[i - 1] - target.get(i)).abs() < 0.02, "level {i}: {}", r.q_hat[i - 1]);
    }
}

#[test]
fn differ_rate_equals_miss_probability() {
    let p = params(100, 5, 250.0);
    let q0 = OccupancyState::empty(100, Buffer::Finite(5)).unwrap();
    let mut sim = CoupledSimulation::new(
        p,
        Policy::JsqD { d: 20, with_replacement: true },
        Policy::JsqNd { n: 9, d: 20, with_replacement: true },
        q0.clone(),
        q0,
        8,
    )
    .unwrap();
    let c = sim.run_events(400_000);
    let rate = c.delta as f64 / c.arrivals as f64;
    let miss = p_reject(100, 9, 20).unwrap();
    assert!((miss - 0.121_576_654_590_569_3).abs() < 1e-12);
    assert!((rate - miss).abs() < 0.005, "{rate} vs {miss}");
    assert!(c.all_hold());
}

#[test]
fn scaling_a_trajectory_file_matches_direct_scaling() {
    let p = params(400, 3, 400.0 * 2.5);
    let q0 = OccupancyState::empty(400, Buffer::Finite(3)).unwrap();
    let t = simulate(&p, &PolicySpec::Jsq, 4.0, &q0, 2).unwrap();
    let direct = diffusion_scale(&t, Regime::Fractional).unwrap();
    let mut buf = Vec::new();
    write_trajectory_csv(&mut buf, &t).unwrap();
    let rows = read_trajectory_csv(buf.as_slice(), 400, Buffer::Finite(3)).unwrap();
    let scaler = DiffusionScaler::new(&p, Regime::Fractional).unwrap();
    assert_eq!(rows.states.len(), direct.len());
    for ((time, s), snap) in rows.times.iter().zip(&rows.states).zip(&direct) {
        let again = scaler.scale(*time, s);
        assert_eq!(&again, snap);
        assert_eq!(again.identity_residual(scaler.k, 400), 0);
    }
}
