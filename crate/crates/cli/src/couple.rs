use anyhow::{bail, Result};
use poold::coupling::{simulate_coupled, CoupledSimulation, CouplingChecks};
use poold::io::{fmt_f64, write_coupled_csv};
use poold::model::{GrowthSpec, SystemParams};
use poold::policies::PolicySpec;

use crate::common::{self, initial_state, out_dir, params, write_file};
use crate::settings::{key, keyd, Key, Settings};

pub const KEYS: &[Key] = &[
    common::N,
    common::B,
    common::LAMBDA,
    common::LAMBDA_N,
    common::SERVICE,
    keyd("policyA", "jsq", "policy of system A"),
    key("policyB", "policy of system B"),
    keyd("T", "10", "horizon"),
    keyd("initA", "empty", "initial state of A: empty, fixed, or counts Q1;Q2;..."),
    keyd("initB", "empty", "initial state of B"),
    keyd("g", "sqrt,N", "comma-separated alikeness scales g(N)"),
    keyd("trace", "full", "coupled.csv output: full or none"),
    common::SEED,
    common::OUT,
];

fn checks_rows(c: &CouplingChecks, p: &SystemParams, scales: &[GrowthSpec]) -> Result<Vec<(String, String)>> {
    let mut rows: Vec<(String, String)> = vec![
        ("events".into(), c.events.to_string()),
        ("arrivals".into(), c.arrivals.to_string()),
        ("delta".into(), c.delta.to_string()),
        (
            "differ_fraction".into(),
            fmt_f64(if c.arrivals > 0 { c.delta as f64 / c.arrivals as f64 } else { 0.0 }),
        ),
        ("overflows_A".into(), c.overflows.0.to_string()),
        ("overflows_B".into(), c.overflows.1.to_string()),
        ("initial_gap".into(), c.initial_gap.to_string()),
        ("two_delta_margin".into(), c.max_two_delta_margin.to_string()),
        ("two_delta_violations".into(), c.two_delta_violations.to_string()),
    ];
    match c.sandwich_n {
        Some(n) => rows.extend([
            ("sandwich_n".into(), n.to_string()),
            ("sandwich_lower_margin".into(), c.max_lower_margin.to_string()),
            ("sandwich_upper_margin".into(), c.max_upper_margin.to_string()),
            ("sandwich_violations".into(), c.sandwich_violations.to_string()),
            ("pointwise_violations".into(), c.pointwise_violations.to_string()),
        ]),
        None => rows.push(("sandwich_n".into(), "n/a".into())),
    }
    rows.push(("max_sum_abs_diff".into(), c.max_sum_abs_diff.to_string()));
    for g in scales {
        let value = g.value(p.pools)?;
        let m = c.gap(value)?;
        let worst = m.per_level.iter().copied().fold(0.0, f64::max);
        rows.push((format!("gap_sum[g={g}]"), fmt_f64(m.summed)));
        rows.push((format!("gap_max_level[g={g}]"), fmt_f64(worst)));
    }
    rows.push(("all_hold".into(), c.all_hold().to_string()));
    Ok(rows)
}

pub fn run(s: &Settings) -> Result<bool> {
    let p = params(s)?;
    let pa: PolicySpec = s.get("policyA")?;
    let pb: PolicySpec = s.get("policyB")?;
    let seed: u64 = s.get("seed")?;
    let horizon: f64 = s.get("T")?;
    let a0 = initial_state(s.raw("initA").unwrap_or("empty"), &p)?;
    let b0 = initial_state(s.raw("initB").unwrap_or("empty"), &p)?;
    let scales: Vec<GrowthSpec> = s.list("g")?;
    let dir = out_dir(s)?;
    let checks = match s.raw("trace").unwrap_or("full") {
        "full" => {
            let trace = simulate_coupled(&p, &pa, &pb, horizon, &a0, &b0, seed)?;
            write_file(&dir, "coupled.csv", |w| write_coupled_csv(w, &trace))?;
            trace.checks
        }
        "none" => {
            let mut sim = CoupledSimulation::new(p, pa.resolve(p.pools)?, pb.resolve(p.pools)?, a0, b0, seed)?;
            sim.run(horizon).clone()
        }
        other => bail!("--trace={other}: expected full or none"),
    };
    let rows = checks_rows(&checks, &p, &scales)?;
    write_file(&dir, "checks.csv", |w| {
        use std::io::Write;
        writeln!(w, "metric,value")?;
        for (k, v) in &rows {
            writeln!(w, "{k},{v}")?;
        }
        Ok(())
    })?;
    s.write_meta(
        &dir,
        &[
            ("resolved_policyA", pa.resolve(p.pools)?.to_string()),
            ("resolved_policyB", pb.resolve(p.pools)?.to_string()),
            ("delta", checks.delta.to_string()),
            ("all_hold", checks.all_hold().to_string()),
        ],
    )?;
    let ok = checks.all_hold();
    println!(
        "couple: {} events, delta {}, 2-delta margin {}, sandwich {}; checks {}",
        checks.events,
        checks.delta,
        checks.max_two_delta_margin,
        checks.sandwich_n.map_or("n/a".to_string(), |n| format!(
            "n={n} lower {} upper {}",
            checks.max_lower_margin, checks.max_upper_margin
        )),
        if ok { "hold" } else { "FAILED" }
    );
    Ok(ok)
}
