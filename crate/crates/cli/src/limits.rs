use std::io::BufReader;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use poold::io::{read_trajectory_csv, write_fluid_csv, write_scaled_csv, write_sde_csv, KeyValues};
use poold::limits::{
    integrate_fluid_recorded, simulate_ou_exact, simulate_reflected, DiffusionScaler, Noise, ReflectedOptions, Regime,
};
use poold::model::{Buffer, FluidState, ServiceMode};

use crate::common::{self, out_dir, params, write_file};
use crate::settings::{key, keyd, Key, Settings};

pub const KEYS: &[Key] = &[
    key("mode", "fluid, ou, reflected or scale"),
    key("N", "number of pools (scale mode; read from the trajectory's meta.txt when absent)"),
    key("B", "pool capacity; fluid mode defaults to 5"),
    common::LAMBDA,
    common::LAMBDA_N,
    common::SERVICE,
    keyd("T", "10", "horizon (fluid, ou, reflected)"),
    keyd("step", "0.001", "time step"),
    keyd("record-every", "1", "fluid mode: keep every k-th step"),
    key("q0", "fluid mode: initial q1,q2,... (default all zero)"),
    keyd("x0", "1", "ou mode: initial value"),
    keyd("noise", "off", "ou/reflected noise: off or an integer seed"),
    keyd("K", "1", "reflected mode: integer load K"),
    keyd("beta", "0", "reflected mode: Halfin-Whitt beta"),
    keyd("z0", "0,0", "reflected mode: initial zeta1,zeta2"),
    key("tail", "reflected mode: initial higher coordinates, comma-separated"),
    key("input", "scale mode: trajectory.csv to rescale"),
    key("regime", "scale mode: f>0 or f=0"),
    common::OUT,
];

fn noise(s: &Settings) -> Result<Noise> {
    match s.raw("noise").unwrap_or("off") {
        "off" => Ok(Noise::Off),
        seed => Ok(Noise::Seeded(
            seed.parse().map_err(|_| anyhow!("--noise={seed}: expected off or an integer seed"))?,
        )),
    }
}

/// Fills system parameters missing from `s` with those recorded next to `input`.
fn with_sibling_meta(s: &Settings, input: &Path) -> Result<Settings> {
    let mut s = s.clone();
    let meta = input.with_file_name("meta.txt");
    if let Ok(text) = std::fs::read_to_string(&meta) {
        let kv = KeyValues::parse(&text).with_context(|| format!("reading {}", meta.display()))?;
        for k in ["N", "B", "service"] {
            if let (false, Some(v)) = (s.has(k), kv.get(k)) {
                s.set(k, v);
            }
        }
        if !s.has("lambda") && !s.has("lambdaN") {
            for k in ["lambda", "lambdaN"] {
                if let Some(v) = kv.get(k) {
                    s.set(k, v);
                }
            }
        }
    }
    Ok(s)
}

pub fn run(s: &Settings) -> Result<bool> {
    let mode: String = s.get("mode")?;
    let dir = out_dir(s)?;
    let horizon: f64 = s.get("T")?;
    let step: f64 = s.get("step")?;
    match mode.as_str() {
        "fluid" => {
            let lambda: f64 = s.get("lambda").context("fluid mode needs the per-pool load --lambda")?;
            let buffer: Buffer = s.opt("B")?.unwrap_or(Buffer::Finite(5));
            let service: ServiceMode = s.get("service")?;
            let q0 = match s.list::<f64>("q0")? {
                v if v.is_empty() => FluidState::zeros(buffer.capacity().unwrap_or(1), buffer),
                v => FluidState::new(v, buffer)?,
            };
            let path = integrate_fluid_recorded(&q0, lambda, service, horizon, step, s.get("record-every")?)?;
            write_file(&dir, "fluid.csv", |w| write_fluid_csv(w, &path))?;
            let end: Vec<String> = path.terminal().values().iter().map(|x| format!("{x:.4}")).collect();
            println!("limits fluid: terminal q = ({})", end.join(", "));
        }
        "ou" => {
            let lambda: f64 = s.get("lambda").context("ou mode needs the per-pool load --lambda")?;
            let path = simulate_ou_exact(s.get("x0")?, lambda, horizon, step, noise(s)?)?;
            write_file(&dir, "ou.csv", |w| write_sde_csv(w, &path, &["x"]))?;
            println!("limits ou: {} steps", path.times.len() - 1);
        }
        "reflected" => {
            let z0: Vec<f64> = s.list("z0")?;
            if z0.len() != 2 {
                bail!("--z0 needs two values zeta1,zeta2");
            }
            let opts = ReflectedOptions {
                k: s.get("K")?,
                beta: s.get("beta")?,
                horizon,
                step,
                tail: s.list("tail")?,
            };
            let path = simulate_reflected((z0[0], z0[1]), &opts, noise(s)?)?;
            let mut names = vec!["zeta1".to_string(), "zeta2".to_string()];
            names.extend((0..opts.tail.len()).map(|j| format!("Q{}", opts.k + 2 + j)));
            let names: Vec<&str> = names.iter().map(String::as_str).collect();
            write_file(&dir, "reflected.csv", |w| write_sde_csv(w, &path, &names))?;
            println!(
                "limits reflected: {} steps, V1(T) = {:.6}",
                path.times.len() - 1,
                path.v1.last().copied().unwrap_or(0.0)
            );
        }
        "scale" => {
            let input: String = s.get("input").context("scale mode needs --input trajectory.csv")?;
            let regime: Regime = s.get("regime").context("scale mode needs --regime f>0 or f=0")?;
            let s = with_sibling_meta(s, Path::new(&input))?;
            let p = params(&s)?;
            let scaler = DiffusionScaler::new(&p, regime)?;
            let file = std::fs::File::open(&input).with_context(|| format!("opening {input}"))?;
            let rows = read_trajectory_csv(BufReader::new(file), p.pools, p.buffer)?;
            let snaps: Vec<_> = rows.times.iter().zip(&rows.states).map(|(t, q)| scaler.scale(*t, q)).collect();
            if let Some(bad) = snaps.iter().find(|x| x.identity_residual(scaler.k, p.pools) != 0) {
                bail!("diffusion identity fails at t={}", bad.time);
            }
            write_file(&dir, "scaled.csv", |w| write_scaled_csv(w, &snaps, regime))?;
            println!("limits scale: {} states rescaled (K={}, beta={:.4})", snaps.len(), scaler.k, scaler.beta);
            s.write_meta(&dir, &[])?;
            return Ok(true);
        }
        other => bail!("--mode={other}: expected fluid, ou, reflected or scale"),
    }
    s.write_meta(&dir, &[])?;
    Ok(true)
}
