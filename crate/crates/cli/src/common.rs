use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use poold::limits::fluid_fixed_point;
use poold::model::{Buffer, OccupancyState, ServiceMode, SystemParams};

use crate::settings::{key, keyd, Key, Settings};

pub const N: Key = key("N", "number of server pools");
pub const B: Key = keyd("B", "5", "pool capacity (integer or 'inf')");
pub const LAMBDA: Key = key("lambda", "per-pool load lambda = lambdaN / N (give this or lambdaN)");
pub const LAMBDA_N: Key = key("lambdaN", "total arrival rate (give this or lambda)");
pub const SERVICE: Key = keyd("service", "infinite", "service mode: infinite or single");
pub const SEED: Key = keyd("seed", "1", "master seed");
pub const OUT: Key = keyd("out", ".", "output directory");

pub fn params(s: &Settings) -> Result<SystemParams> {
    let pools: usize = s.get("N")?;
    let buffer: Buffer = s.get("B")?;
    let service: ServiceMode = s.get("service")?;
    let rate = match (s.opt::<f64>("lambda")?, s.opt::<f64>("lambdaN")?) {
        (Some(l), None) => l * pools as f64,
        (None, Some(r)) => r,
        (Some(_), Some(_)) => bail!("give exactly one of --lambda and --lambdaN, not both"),
        (None, None) => bail!("give one of --lambda or --lambdaN"),
    };
    Ok(SystemParams::new(pools, buffer, rate, service)?)
}

/// `empty`, `fixed` (the fluid fixed point rounded to counts) or explicit `Q1,Q2,...`.
pub fn initial_state(spec: &str, p: &SystemParams) -> Result<OccupancyState> {
    match spec.trim() {
        "empty" => Ok(OccupancyState::empty(p.pools, p.buffer)?),
        "fixed" => {
            let q = fluid_fixed_point(p.lambda(), p.buffer)?;
            let counts = (1..=q.levels()).map(|i| (q.get(i) * p.pools as f64).round() as usize).collect();
            Ok(OccupancyState::new(p.pools, p.buffer, counts)?)
        }
        list => {
            let counts = list
                .split(|c: char| c == ',' || c == ';' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|c| c.parse::<usize>().with_context(|| format!("initial state '{list}': '{c}' is not a count")))
                .collect::<Result<Vec<_>>>()?;
            Ok(OccupancyState::new(p.pools, p.buffer, counts)?)
        }
    }
}

pub fn out_dir(s: &Settings) -> Result<PathBuf> {
    let dir = PathBuf::from(s.raw("out").unwrap_or("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

pub fn write_file(dir: &Path, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).with_context(|| format!("writing {}", path.display()))
}
