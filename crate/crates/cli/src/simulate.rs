use anyhow::{bail, Result};
use poold::engine::{simulate, steady_state, SteadyStateOptions};
use poold::io::{fmt_f64, write_steady_csv, write_trajectory_csv};
use poold::policies::PolicySpec;

use crate::common::{self, initial_state, out_dir, params, write_file};
use crate::settings::{keyd, Key, Settings};

pub const KEYS: &[Key] = &[
    common::N,
    common::B,
    common::LAMBDA,
    common::LAMBDA_N,
    common::SERVICE,
    keyd("policy", "jsq", PolicySpec::GRAMMAR),
    keyd("T", "100", "run time"),
    keyd("warmup", "0.2", "fraction of the run discarded before averaging"),
    keyd("batches", "20", "number of batch means for confidence intervals"),
    keyd("init", "empty", "initial state: empty, fixed, or counts Q1;Q2;..."),
    keyd("trajectory", "full", "trajectory.csv output: full or none"),
    common::SEED,
    common::OUT,
];

pub fn run(s: &Settings) -> Result<bool> {
    let p = params(s)?;
    let policy: PolicySpec = s.get("policy")?;
    let seed: u64 = s.get("seed")?;
    let horizon: f64 = s.get("T")?;
    let initial = initial_state(s.raw("init").unwrap_or("empty"), &p)?;
    let opts = SteadyStateOptions {
        run_time: horizon,
        warmup_fraction: s.get("warmup")?,
        n_batches: s.get("batches")?,
        initial: Some(initial.clone()),
    };
    let record = match s.raw("trajectory").unwrap_or("full") {
        "full" => true,
        "none" => false,
        other => bail!("--trajectory={other}: expected full or none"),
    };
    let dir = out_dir(s)?;
    let report = steady_state(&p, &policy, &opts, seed)?;
    if record {
        let t = simulate(&p, &policy, horizon, &initial, seed)?;
        write_file(&dir, "trajectory.csv", |w| write_trajectory_csv(w, &t))?;
    }
    write_file(&dir, "steady.csv", |w| write_steady_csv(w, &report))?;
    let resolved = policy.resolve(p.pools)?;
    s.write_meta(
        &dir,
        &[
            ("resolved_policy", resolved.to_string()),
            ("events", report.events.to_string()),
            ("arrivals", report.arrivals.to_string()),
            ("overflows", report.overflows.to_string()),
            ("loss", fmt_f64(report.loss)),
        ],
    )?;
    println!(
        "simulate: {} over T={horizon}, {} events, loss {:.6}; wrote {}",
        resolved,
        report.events,
        report.loss,
        dir.display()
    );
    Ok(true)
}
