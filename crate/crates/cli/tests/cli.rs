use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poold-sim"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env_remove("POOLD_SIM_WORKERS")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Numeric cells of a CSV, header dropped.
fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn num(cell: &str) -> f64 {
    cell.parse().unwrap_or_else(|_| panic!("not a number: {cell}"))
}

fn check(text: &str, metric: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{metric},")))
        .unwrap_or_else(|| panic!("no {metric} in checks.csv"))
        .to_string()
}

#[test]
fn simulate_writes_one_steady_row_per_level() {
    let dir = TempDir::new().unwrap();
    let args = ["simulate", "--N", "10000", "--lambda", "2.5", "--B", "5", "--policy", "jsqd:d=sqrt", "--T", "50", "--seed", "7", "--trajectory", "none"];
    ok(dir.path(), &args);
    let steady = read(dir.path(), "steady.csv");
    assert_eq!(steady.lines().next(), Some("level,q_hat,ci_half"));
    let levels: Vec<usize> = rows(&steady).iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(levels, vec![1, 2, 3, 4, 5]);
    let meta = read(dir.path(), "meta.txt");
    for line in ["command=simulate", "N=10000", "lambda=2.5", "policy=jsqd:d=sqrt", "seed=7", "version="] {
        assert!(meta.contains(line), "meta lacks {line}");
    }
}

#[test]
fn simulate_is_deterministic_and_meta_reproduces_it() {
    let (a, b, c) = (TempDir::new().unwrap(), TempDir::new().unwrap(), TempDir::new().unwrap());
    let args = ["simulate", "--N", "200", "--lambda", "2.5", "--policy", "jsqd:d=sqrt", "--T", "30", "--seed", "7"];
    ok(a.path(), &args);
    ok(b.path(), &args);
    for f in ["trajectory.csv", "steady.csv"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f} differs between runs");
    }
    let meta = a.path().join("meta.txt");
    ok(c.path(), &["simulate", "--config", meta.to_str().unwrap()]);
    assert_eq!(read(a.path(), "steady.csv"), read(c.path(), "steady.csv"));
    assert_eq!(read(a.path(), "trajectory.csv"), read(c.path(), "trajectory.csv"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# a run\nN=50\nlambda=2.5\nT=25\nseed=3\npolicy=random\n").unwrap();
    ok(dir.path(), &["simulate", "--config", cfg.to_str().unwrap(), "--policy", "jsq", "--trajectory", "none"]);
    let meta = read(dir.path(), "meta.txt");
    assert!(meta.contains("policy=jsq\n") && meta.contains("T=25\n") && meta.contains("N=50\n"));

    fs::write(&cfg, "N=50\nlambda=2.5\nhorizon=3\n").unwrap();
    let out = run(dir.path(), &["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key 'horizon'"));
}

#[test]
fn single_pool_single_slot_is_busy_half_the_time() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["simulate", "--policy", "jsq", "--N", "1", "--B", "1", "--lambdaN", "1", "--T", "100000", "--trajectory", "none"]);
    let q1 = num(&rows(&read(dir.path(), "steady.csv"))[0][1]);
    assert!((q1 - 0.5).abs() < 0.005, "{q1}");
}

#[test]
fn usage_errors_exit_with_status_two() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["simulate", "--N", "10", "--lambda", "1", "--policy", "jsqd:k=3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("policy grammar"));
    let both = run(dir.path(), &["simulate", "--N", "10", "--lambda", "1", "--lambdaN", "10"]);
    assert_eq!(both.status.code(), Some(2));
    let neither = run(dir.path(), &["simulate", "--N", "10"]);
    assert_eq!(neither.status.code(), Some(2));
}

#[test]
fn couple_identical_decisions_give_zero_delta() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["couple", "--N", "100", "--lambda", "2.5", "--policyA", "jsq", "--policyB", "cjsq:n=0", "--T", "10"]);
    let checks = read(dir.path(), "checks.csv");
    assert_eq!(check(&checks, "delta"), "0");
    assert_eq!(check(&checks, "max_sum_abs_diff"), "0");
    assert_eq!(check(&checks, "all_hold"), "true");
    let coupled = read(dir.path(), "coupled.csv");
    assert!(coupled.lines().count() > 1000);
}

#[test]
fn couple_sandwich_margins_are_nonpositive() {
    for seed in ["1", "2", "3"] {
        let dir = TempDir::new().unwrap();
        ok(dir.path(), &["couple", "--N", "200", "--lambda", "2.5", "--policyB", "cjsq:n=16", "--T", "20", "--seed", seed, "--trace", "none"]);
        let checks = read(dir.path(), "checks.csv");
        assert_eq!(check(&checks, "sandwich_n"), "16");
        assert!(num(&check(&checks, "sandwich_lower_margin")) <= 0.0);
        assert!(num(&check(&checks, "sandwich_upper_margin")) <= 0.0);
        assert!(num(&check(&checks, "two_delta_margin")) <= 0.0);
        assert!(!dir.path().join("coupled.csv").exists());
    }
}

#[test]
fn couple_differ_fraction_is_the_miss_probability() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["couple", "--N", "100", "--lambda", "2.5", "--policyA", "jsqd:d=20", "--policyB", "jsqnd:n=9,d=20", "--T", "400", "--trace", "none"]);
    let frac = num(&check(&read(dir.path(), "checks.csv"), "differ_fraction"));
    assert!((frac - 0.1216).abs() < 0.006, "{frac}");
}

#[test]
fn couple_rejects_invalid_inputs() {
    let dir = TempDir::new().unwrap();
    for extra in [&["--initA", "3,5"][..], &["--initB", "11"][..], &["--policyB", "jsqd:d=11"][..]] {
        let mut args = vec!["couple", "--N", "10", "--lambda", "1", "--policyB", "random"];
        args.extend_from_slice(extra);
        assert_eq!(run(dir.path(), &args).status.code(), Some(2), "{extra:?}");
    }
}

#[test]
fn limits_fluid_reaches_the_fixed_point() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["limits", "--mode", "fluid", "--lambda", "2.5", "--B", "5", "--T", "30", "--record-every", "100"]);
    let fluid = read(dir.path(), "fluid.csv");
    assert_eq!(fluid.lines().next(), Some("t,q1,q2,q3,q4,q5"));
    let last = rows(&fluid).pop().unwrap();
    assert!((num(&last[0]) - 30.0).abs() < 1e-9);
    for (cell, want) in last[1..].iter().zip([1.0, 1.0, 0.5, 0.0, 0.0]) {
        assert!((num(cell) - want).abs() < 1e-3, "{last:?}");
    }
}

#[test]
fn limits_noiseless_ou_is_exponential_decay() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["limits", "--mode", "ou", "--lambda", "2.5", "--x0", "1", "--noise", "off", "--T", "5", "--step", "0.01"]);
    for r in rows(&read(dir.path(), "ou.csv")) {
        let (t, x) = (num(&r[0]), num(&r[1]));
        assert!((x - (-t).exp()).abs() < 1e-12, "t={t}: {x}");
    }
}

#[test]
fn limits_noiseless_reflected_solves_the_linear_ode() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["limits", "--mode", "reflected", "--beta", "3", "--K", "1", "--z0", "0,0", "--noise", "off", "--T", "5", "--step", "0.0001"]);
    let text = read(dir.path(), "reflected.csv");
    assert_eq!(text.lines().next(), Some("t,zeta1,zeta2,V1"));
    for r in rows(&text).iter().step_by(100) {
        let (t, z1) = (num(&r[0]), num(&r[1]));
        assert!((z1 - 3.0 * (1.0 - (-t).exp())).abs() < 1e-3, "t={t}: {z1}");
    }
}

#[test]
fn limits_scale_reads_parameters_next_to_the_trajectory() {
    let sim = TempDir::new().unwrap();
    ok(sim.path(), &["simulate", "--N", "1600", "--lambdaN", "4000", "--B", "3", "--T", "10", "--batches", "4", "--policy", "jsq"]);
    let input = sim.path().join("trajectory.csv");
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["limits", "--mode", "scale", "--input", input.to_str().unwrap(), "--regime", "f>0"]);
    let scaled = read(dir.path(), "scaled.csv");
    assert_eq!(scaled.lines().next(), Some("t,level,value,regime"));
    let first = &rows(&scaled)[0];
    // empty start: (N - 0)/sqrt N at level 1
    assert_eq!(first[1], "1");
    assert!((num(&first[2]) - 40.0).abs() < 1e-12);

    let out = run(dir.path(), &["limits", "--mode", "scale", "--input", input.to_str().unwrap(), "--regime", "f=0"]);
    assert_eq!(out.status.code(), Some(2), "integral regime at lambda = 2.5 must be refused");
}

#[test]
fn loss_matches_erlang_for_two_pools() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["loss", "--N", "2", "--B", "1", "--lambdaN", "2", "--policy", "jsq", "--T", "100000"]);
    let text = read(dir.path(), "loss.csv");
    assert_eq!(text.lines().next(), Some("N,B,lambdaN,d,n,beta,loss_emp,lower,upper,asymptotic,sqrtN_loss"));
    let r = &rows(&text)[0];
    assert!((num(&r[6]) - 0.4).abs() < 0.005, "{r:?}");
    assert!((num(&r[7]) - 0.4).abs() < 1e-12);
}

#[test]
fn loss_is_bracketed_by_the_bounds() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["loss", "--N", "50", "--B", "1", "--lambdaN", "45", "--policy", "jsqd:d=50", "--T", "5000"]);
    let r = &rows(&read(dir.path(), "loss.csv"))[0];
    let (loss, lower, upper) = (num(&r[6]), num(&r[7]), num(&r[8]));
    assert!(lower < upper && loss < upper);
    assert!(read(dir.path(), "meta.txt").contains("# bracketed=true"));
}

#[test]
fn loss_beta_sets_the_arrival_rate() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["loss", "--N", "400", "--B", "1", "--beta", "1", "--T", "200"]);
    let r = &rows(&read(dir.path(), "loss.csv"))[0];
    assert!((num(&r[2]) - 380.0).abs() < 1e-9);
    assert!((num(&r[5]) - 1.0).abs() < 1e-12);
    assert_eq!(r[3], "120");
}

#[test]
fn loss_requires_a_finite_buffer_and_a_jsq_family_policy() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["loss", "--N", "50", "--B", "inf", "--lambdaN", "45"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(dir.path(), &["loss", "--N", "50", "--B", "1", "--lambdaN", "45", "--policy", "cjsq:n=2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_over_n_shrinks_the_fixed_point_error() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["sweep", "--grid-N", "100,1000,10000", "--lambda", "2.5", "--policy", "jsqd:d=log", "--metric", "fixed-point-error", "--T", "40", "--reps", "3"]);
    let text = read(dir.path(), "sweep.csv");
    assert_eq!(text.lines().next(), Some("index,N,d,n,policy,metric,value,stderr,reps,seed"));
    let values: Vec<f64> = rows(&text).iter().map(|r| num(&r[6])).collect();
    assert!(values[0] > values[1] && values[1] > values[2], "{values:?}");
}

#[test]
fn sweep_over_d_separates_random_from_large_d() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["sweep", "--N", "10000", "--grid-d", "1,2,sqrt,N", "--lambda", "2.5", "--metric", "fixed-point-error", "--T", "30"]);
    let r = rows(&read(dir.path(), "sweep.csv"));
    let ds: Vec<&str> = r.iter().map(|r| r[2].as_str()).collect();
    assert_eq!(ds, ["1", "2", "100", "10000"]);
    let v: Vec<f64> = r.iter().map(|r| num(&r[6])).collect();
    assert!(v[0] > 0.2, "{v:?}");
    assert!(v[2] < 0.02 && v[3] < 0.02, "{v:?}");
}

#[test]
fn sweep_output_does_not_depend_on_worker_count() {
    let args = ["sweep", "--grid-N", "100,200,300,400", "--lambda", "1.5", "--metric", "alikeness", "--policy", "jsqnd:n=3,d=10", "--T", "5"];
    let outputs: Vec<String> = ["1", "3"]
        .iter()
        .map(|w| {
            let dir = TempDir::new().unwrap();
            let out = Command::new(env!("CARGO_BIN_EXE_poold-sim"))
                .args(args)
                .arg("--out")
                .arg(dir.path())
                .env("POOLD_SIM_WORKERS", w)
                .output()
                .unwrap();
            assert!(out.status.success());
            read(dir.path(), "sweep.csv")
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
    assert!(outputs[0].contains("\"jsqnd:n=3,d=10\""));
}

#[test]
fn sweep_rejects_an_empty_grid() {
    let dir = TempDir::new().unwrap();
    for grid in [&["--grid-N", ","][..], &[][..], &["--grid-N", "10", "--N", "10", "--grid-d", "2"][..]] {
        let mut args = vec!["sweep", "--lambda", "2"];
        args.extend_from_slice(grid);
        assert_eq!(run(dir.path(), &args).status.code(), Some(2), "{grid:?}");
    }
    assert!(!dir.path().join("sweep.csv").exists());
}
