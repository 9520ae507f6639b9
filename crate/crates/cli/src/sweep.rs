use std::io::Write;

use anyhow::{anyhow, bail, Result};
use poold::coupling::CoupledSimulation;
use poold::engine::{steady_state, Simulation, SteadyStateOptions};
use poold::io::fmt_f64;
use poold::limits::fluid_fixed_point;
use poold::model::{Buffer, GrowthSpec, OccupancyState, SystemParams};
use poold::policies::{Policy, PolicySpec};
use poold::rng::derive_seed;
use rayon::prelude::*;

use crate::common::{self, out_dir, write_file};
use crate::settings::{key, keyd, Key, Settings};

pub const KEYS: &[Key] = &[
    key("grid-N", "comma-separated pool counts (give this or grid-d)"),
    key("grid-d", "comma-separated sample sizes at fixed --N, growth specs allowed"),
    key("N", "number of pools for a d-grid"),
    common::B,
    common::LAMBDA,
    key("beta", "Halfin-Whitt beta; sets lambdaN = K N - beta sqrt(N)"),
    keyd("K", "1", "integer load used with --beta"),
    common::SERVICE,
    keyd("metric", "fixed-point-error", "fixed-point-error, alikeness, scaled-loss or diffusion-gap"),
    keyd("policy", "jsqd:d=log", "policy template; growth specs are evaluated at each N"),
    keyd("g", "sqrt", "alikeness scale g(N)"),
    keyd("T", "50", "run time per replication"),
    keyd("warmup", "0.2", "fraction of the run discarded before averaging"),
    keyd("batches", "20", "number of batch means"),
    keyd("reps", "1", "replications per grid point"),
    Key {
        name: "workers",
        help: "parallel grid points (0 = all cores)",
        default: Some("0"),
        env: Some("POOLD_SIM_WORKERS"),
    },
    common::SEED,
    common::OUT,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    FixedPointError,
    Alikeness,
    ScaledLoss,
    DiffusionGap,
}

impl std::str::FromStr for Metric {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fixed-point-error" => Metric::FixedPointError,
            "alikeness" => Metric::Alikeness,
            "scaled-loss" => Metric::ScaledLoss,
            "diffusion-gap" => Metric::DiffusionGap,
            other => bail!("unknown metric '{other}'"),
        })
    }
}

struct Point {
    pools: usize,
    spec: PolicySpec,
}

struct Row {
    pools: usize,
    policy: Policy,
    spec: PolicySpec,
    mean: f64,
    stderr: f64,
    seed: u64,
}

/// The template with its sample size replaced.
fn with_d(template: &PolicySpec, d: GrowthSpec) -> Result<PolicySpec> {
    Ok(match template {
        PolicySpec::JsqD { with_replacement, .. } => PolicySpec::JsqD {
            d,
            with_replacement: *with_replacement,
        },
        PolicySpec::JsqNd { n, with_replacement, .. } => PolicySpec::JsqNd {
            n: n.clone(),
            d,
            with_replacement: *with_replacement,
        },
        other => bail!("a d-grid needs a jsqd or jsqnd policy template, got {other}"),
    })
}

fn grid(s: &Settings) -> Result<Vec<Point>> {
    let template: PolicySpec = s.get("policy")?;
    let points: Vec<Point> = match (s.has("grid-N"), s.has("grid-d")) {
        (true, false) => s
            .list::<usize>("grid-N")?
            .into_iter()
            .map(|pools| Point {
                pools,
                spec: template.clone(),
            })
            .collect(),
        (false, true) => {
            let pools: usize = s.get("N").map_err(|_| anyhow!("a d-grid needs --N"))?;
            s.list::<GrowthSpec>("grid-d")?
                .into_iter()
                .map(|d| Ok(Point { pools, spec: with_d(&template, d)? }))
                .collect::<Result<_>>()?
        }
        (true, true) => bail!("give one of --grid-N and --grid-d, not both"),
        (false, false) => bail!("give a grid: --grid-N or --grid-d"),
    };
    if points.is_empty() {
        bail!("the grid is empty");
    }
    Ok(points)
}

/// Per-point system: `beta` puts the load at `K - beta / sqrt(N)`.
fn point_params(s: &Settings, pools: usize) -> Result<SystemParams> {
    let buffer: Buffer = s.get("B")?;
    let service = s.get("service")?;
    let rate = match (s.opt::<f64>("lambda")?, s.opt::<f64>("beta")?) {
        (Some(l), None) => l * pools as f64,
        (None, Some(beta)) => (s.get::<usize>("K")? * pools) as f64 - beta * (pools as f64).sqrt(),
        (Some(_), Some(_)) => bail!("give one of --lambda and --beta, not both"),
        (None, None) => bail!("give --lambda or --beta"),
    };
    Ok(SystemParams::new(pools, buffer, rate, service)?)
}

fn replicate(s: &Settings, metric: Metric, p: &SystemParams, spec: &PolicySpec, policy: Policy, seed: u64) -> Result<f64> {
    let horizon: f64 = s.get("T")?;
    let steady = |initial| -> Result<_> {
        let opts = SteadyStateOptions {
            run_time: horizon,
            warmup_fraction: s.get("warmup")?,
            n_batches: s.get("batches")?,
            initial,
        };
        Ok(steady_state(p, spec, &opts, seed)?)
    };
    let pools = p.pools;
    Ok(match metric {
        Metric::FixedPointError => {
            let target = fluid_fixed_point(p.lambda(), p.buffer)?;
            let r = steady(None)?;
            let levels = r.q_hat.len().max(target.levels());
            (1..=levels)
                .map(|i| (r.q_hat.get(i - 1).copied().unwrap_or(0.0) - target.get(i)).abs())
                .fold(0.0, f64::max)
        }
        Metric::ScaledLoss => {
            if !p.buffer.is_finite() {
                bail!("scaled-loss needs a finite --B");
            }
            p.sqrt_n() * steady(None)?.loss
        }
        Metric::Alikeness => {
            let g: GrowthSpec = s.get("g")?;
            let empty = OccupancyState::empty(pools, p.buffer)?;
            let mut sim = CoupledSimulation::new(*p, Policy::Jsq, policy, empty.clone(), empty, seed)?;
            sim.run(horizon).gap(g.value(pools)?)?.summed
        }
        Metric::DiffusionGap => {
            // start with sum_{i<=K} (N - Q_i) = beta sqrt N at level K
            let k: usize = s.get("K")?;
            let beta: f64 = s.opt("beta")?.unwrap_or(0.0);
            let idle = ((beta.max(0.0) * p.sqrt_n()).round() as usize).min(pools);
            let levels = p.buffer.capacity().unwrap_or(k + 1).max(k);
            let counts = (1..=levels)
                .map(|i| match i.cmp(&k) {
                    std::cmp::Ordering::Less => pools,
                    std::cmp::Ordering::Equal => pools - idle,
                    std::cmp::Ordering::Greater => 0,
                })
                .collect();
            let q0 = OccupancyState::new(pools, p.buffer, counts)?;
            let mut sim = Simulation::new(*p, policy, q0, seed)?;
            let gap = |q: &OccupancyState| (1..=k).map(|i| pools - q.level(i)).sum::<usize>();
            let mut sup = gap(sim.state());
            while sim.step_until(horizon).is_some() {
                sup = sup.max(gap(sim.state()));
            }
            sup as f64 / p.sqrt_n()
        }
    })
}

fn evaluate(s: &Settings, metric: Metric, point: &Point, reps: u64, seed: u64) -> Result<Row> {
    let p = point_params(s, point.pools)?;
    let policy = point.spec.resolve(point.pools)?;
    policy.validate(point.pools)?;
    let values = (0..reps)
        .map(|r| replicate(s, metric, &p, &point.spec, policy, derive_seed(seed, r)))
        .collect::<Result<Vec<f64>>>()?;
    let mean = values.iter().sum::<f64>() / reps as f64;
    let stderr = if reps > 1 {
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        (var / reps as f64).sqrt()
    } else {
        f64::NAN
    };
    Ok(Row {
        pools: point.pools,
        policy,
        spec: point.spec.clone(),
        mean,
        stderr,
        seed,
    })
}

fn d_and_n(policy: &Policy, pools: usize) -> (usize, usize) {
    match *policy {
        Policy::Jsq => (pools, 0),
        Policy::Random => (1, 0),
        Policy::JsqD { d, .. } => (d, 0),
        Policy::Cjsq { n } => (pools, n),
        Policy::JsqNd { n, d, .. } => (d, n),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn run(s: &Settings) -> Result<bool> {
    let metric: Metric = s.get("metric")?;
    let points = grid(s)?;
    let reps: u64 = s.get("reps")?;
    if reps == 0 {
        bail!("--reps must be at least 1");
    }
    let master: u64 = s.get("seed")?;
    let workers: usize = s.get("workers")?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let rows = pool.install(|| {
        points
            .par_iter()
            .enumerate()
            .map(|(i, point)| evaluate(s, metric, point, reps, derive_seed(master, i as u64)))
            .collect::<Result<Vec<Row>>>()
    })?;
    let metric_name = s.raw("metric").unwrap_or("fixed-point-error");
    let dir = out_dir(s)?;
    write_file(&dir, "sweep.csv", |w| {
        writeln!(w, "index,N,d,n,policy,metric,value,stderr,reps,seed")?;
        for (i, r) in rows.iter().enumerate() {
            let (d, n) = d_and_n(&r.policy, r.pools);
            writeln!(
                w,
                "{i},{},{d},{n},{},{metric_name},{},{},{reps},{}",
                r.pools,
                csv_field(&r.spec.to_string()),
                fmt_f64(r.mean),
                fmt_f64(r.stderr),
                r.seed
            )?;
        }
        Ok(())
    })?;
    s.write_meta(&dir, &[])?;
    for (i, r) in rows.iter().enumerate() {
        println!("sweep[{i}] N={} policy={}: {metric_name} = {:.6}", r.pools, r.spec, r.mean);
    }
    Ok(true)
}
