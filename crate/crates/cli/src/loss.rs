use anyhow::{bail, Result};
use poold::analytics::{LossReport, ModifiedRate};
use poold::engine::{steady_state, SteadyStateOptions};
use poold::io::write_loss_csv;
use poold::model::{Buffer, SystemParams};
use poold::policies::{Policy, PolicySpec};

use crate::common::{self, out_dir, params, write_file};
use crate::settings::{key, keyd, Key, Settings};

pub const KEYS: &[Key] = &[
    common::N,
    common::B,
    common::LAMBDA,
    common::LAMBDA_N,
    key("beta", "Halfin-Whitt beta; sets lambdaN = B N - beta sqrt(N)"),
    common::SERVICE,
    keyd("policy", "jsqd:d=sqrtlog", "jsq, random, jsqd:... or jsqnd:..."),
    keyd("T", "1000", "run time"),
    keyd("warmup", "0.2", "fraction of the run discarded before averaging"),
    keyd("batches", "20", "number of batch means for confidence intervals"),
    keyd("rate-reading", "admitted", "arrival rate of the modified Erlang system: admitted or literal"),
    keyd("slack", "2", "bracketing tolerance in confidence half-widths"),
    common::SEED,
    common::OUT,
];

/// Arrival rate from `beta` when given, otherwise from lambda or lambdaN.
pub fn loss_params(s: &Settings) -> Result<SystemParams> {
    let buffer: Buffer = s.get("B")?;
    let Some(b) = buffer.capacity() else {
        bail!("loss bounds need a finite --B, got {buffer}");
    };
    match s.opt::<f64>("beta")? {
        None => params(s),
        Some(beta) => {
            if s.has("lambda") || s.has("lambdaN") {
                bail!("--beta sets the arrival rate; drop --lambda/--lambdaN");
            }
            let pools: usize = s.get("N")?;
            let rate = (b * pools) as f64 - beta * (pools as f64).sqrt();
            Ok(SystemParams::new(pools, buffer, rate, s.get("service")?)?)
        }
    }
}

/// `(d, n)` of the JSQ(n, d) family member the bounds are evaluated for.
pub fn bound_parameters(policy: &Policy, pools: usize) -> Result<(usize, usize)> {
    Ok(match *policy {
        Policy::Jsq => (pools, 0),
        Policy::Random => (1, 0),
        Policy::JsqD { d, .. } => (d, 0),
        Policy::JsqNd { n, d, .. } => (d, n),
        Policy::Cjsq { .. } => bail!("loss bounds are defined for the JSQ(n, d) family; cjsq is not supported"),
    })
}

pub fn run(s: &Settings) -> Result<bool> {
    let p = loss_params(s)?;
    let spec: PolicySpec = s.get("policy")?;
    let policy = spec.resolve(p.pools)?;
    policy.validate(p.pools)?;
    let (d, n) = bound_parameters(&policy, p.pools)?;
    let reading = match s.raw("rate-reading").unwrap_or("admitted") {
        "admitted" => ModifiedRate::Admitted,
        "literal" => ModifiedRate::Literal,
        other => bail!("--rate-reading={other}: expected admitted or literal"),
    };
    let slack: f64 = s.get("slack")?;
    let opts = SteadyStateOptions {
        run_time: s.get("T")?,
        warmup_fraction: s.get("warmup")?,
        n_batches: s.get("batches")?,
        initial: None,
    };
    let r = steady_state(&p, &spec, &opts, s.get("seed")?)?;
    let report = LossReport::new(&p, d, n, r.loss, r.loss_ci_half, reading)?;
    let ok = report.bracketed(slack);
    let dir = out_dir(s)?;
    write_file(&dir, "loss.csv", |w| write_loss_csv(w, std::slice::from_ref(&report)))?;
    s.write_meta(&dir, &[("bracketed", ok.to_string())])?;
    println!(
        "loss: {:.6} +- {:.6} in [{:.6}, {:.6}]{}; sqrtN*L = {:.4}, asymptotic {:.4}",
        report.loss_emp,
        report.loss_ci_half,
        report.lower,
        report.upper,
        if ok { "" } else { " VIOLATED" },
        report.sqrt_n_loss,
        report.asymptotic
    );
    Ok(ok)
}
