//! CSV writers, the trajectory reader, and the flat `key=value` record used
//! for run metadata and config files.
//!
//! Floats are written with 17 significant digits so every value reads back
//! bit-exactly.

use std::io::{self, BufRead, Write};

use crate::analytics::LossReport;
use crate::coupling::{CoupledKind, CoupledTrace};
use crate::engine::{SteadyStateReport, Trajectory};
use crate::error::{Error, Result};
use crate::limits::{DiffusionSnapshot, FluidTrajectory, Regime, SdePath};
use crate::model::{Buffer, OccupancyState};

/// 17 significant digits, scientific notation.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn header(w: &mut impl Write, fixed: &[&str], prefix: &str, count: usize) -> io::Result<()> {
    let mut cols: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
    cols.extend((1..=count).map(|i| format!("{prefix}{i}")));
    writeln!(w, "{}", cols.join(","))
}

fn push_levels(line: &mut String, state: &OccupancyState, levels: usize) {
    for i in 1..=levels {
        line.push(',');
        line.push_str(&state.level(i).to_string());
    }
}

/// `t,kind,level,Q1..Qmax`; the first row (`kind = initial`, `level = 0`) is the starting state.
pub fn write_trajectory_csv(w: &mut impl Write, trajectory: &Trajectory) -> io::Result<()> {
    let levels = trajectory.max_level().max(1);
    header(w, &["t", "kind", "level"], "Q", levels)?;
    let buffer = trajectory.params.buffer;
    let mut result = Ok(());
    trajectory.replay(|t, ev, s| {
        if result.is_err() {
            return;
        }
        let (kind, level) = ev.map_or(("initial", 0), |e| (e.kind.label(), e.kind.level(buffer)));
        let mut line = format!("{},{kind},{level}", fmt_f64(t));
        push_levels(&mut line, s, levels);
        result = writeln!(w, "{line}");
    });
    result
}

/// States parsed back from a trajectory CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRows {
    pub times: Vec<f64>,
    pub states: Vec<OccupancyState>,
}

pub fn read_trajectory_csv(r: impl BufRead, pools: usize, buffer: Buffer) -> Result<TrajectoryRows> {
    let mut lines = r.lines();
    let head = lines
        .next()
        .ok_or_else(|| Error::Parse("empty trajectory file".into()))?
        .map_err(|e| Error::Parse(e.to_string()))?;
    let cols: Vec<&str> = head.trim().split(',').collect();
    if cols.len() < 4 || cols[..3] != ["t", "kind", "level"] || cols[3] != "Q1" {
        return Err(Error::Parse(format!("not a trajectory header: '{head}'")));
    }
    let levels = cols.len() - 3;
    let mut rows = TrajectoryRows {
        times: Vec::new(),
        states: Vec::new(),
    };
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::Parse(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Parse(format!("trajectory row {}: {what}", n + 2));
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != levels + 3 {
            return Err(bad(&format!("expected {} fields, found {}", levels + 3, fields.len())));
        }
        let t: f64 = fields[0].parse().map_err(|_| bad("time is not a number"))?;
        let counts = fields[3..]
            .iter()
            .map(|f| f.parse::<usize>().map_err(|_| bad("level count is not an integer")))
            .collect::<Result<Vec<_>>>()?;
        let state = OccupancyState::new(pools, buffer, counts).map_err(|e| bad(&e.to_string()))?;
        rows.times.push(t);
        rows.states.push(state);
    }
    Ok(rows)
}

/// `level,q_hat,ci_half`.
pub fn write_steady_csv(w: &mut impl Write, report: &SteadyStateReport) -> io::Result<()> {
    writeln!(w, "level,q_hat,ci_half")?;
    for (i, (q, ci)) in report.q_hat.iter().zip(&report.ci_half).enumerate() {
        writeln!(w, "{},{},{}", i + 1, fmt_f64(*q), fmt_f64(*ci))?;
    }
    Ok(())
}

/// `t,kind,rankA,rankB,differ,delta,sumAbsDiff,QA1..,QB1..`. Ranks are empty on departures.
pub fn write_coupled_csv(w: &mut impl Write, trace: &CoupledTrace) -> io::Result<()> {
    let mut levels = 1;
    trace.replay(|_, s| levels = levels.max(s.a.levels()).max(s.b.levels()));
    let mut cols: Vec<String> = ["t", "kind", "rankA", "rankB", "differ", "delta", "sumAbsDiff"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend((1..=levels).map(|i| format!("QA{i}")));
    cols.extend((1..=levels).map(|i| format!("QB{i}")));
    writeln!(w, "{}", cols.join(","))?;
    let mut result = Ok(());
    trace.replay(|ev, s| {
        if result.is_err() {
            return;
        }
        let (t, kind, ra, rb, differ) = match ev {
            None => (0.0, "initial", String::new(), String::new(), 0),
            Some(e) => match e.kind {
                CoupledKind::Arrival { a, b, differ } => {
                    (e.time, "arrival", a.rank().to_string(), b.rank().to_string(), u8::from(differ))
                }
                CoupledKind::Departure { green, .. } => (
                    e.time,
                    if green { "departure_green" } else { "departure_colored" },
                    String::new(),
                    String::new(),
                    0,
                ),
            },
        };
        let mut line = format!("{},{kind},{ra},{rb},{differ},{},{}", fmt_f64(t), s.delta, s.sum_abs_diff());
        push_levels(&mut line, &s.a, levels);
        push_levels(&mut line, &s.b, levels);
        result = writeln!(w, "{line}");
    });
    result
}

/// `t,q1..qB`.
pub fn write_fluid_csv(w: &mut impl Write, path: &FluidTrajectory) -> io::Result<()> {
    let levels = path.states.iter().map(|s| s.levels()).max().unwrap_or(0).max(1);
    header(w, &["t"], "q", levels)?;
    for (t, s) in path.times.iter().zip(&path.states) {
        let mut line = fmt_f64(*t);
        for i in 1..=levels {
            line.push(',');
            line.push_str(&fmt_f64(s.get(i)));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// `t,<names...>,V1`, one column per path coordinate.
pub fn write_sde_csv(w: &mut impl Write, path: &SdePath, names: &[&str]) -> io::Result<()> {
    let width = path.values.first().map_or(0, Vec::len);
    let mut cols = vec!["t".to_string()];
    for j in 0..width {
        cols.push(names.get(j).map_or_else(|| format!("x{}", j + 1), |s| s.to_string()));
    }
    cols.push("V1".into());
    writeln!(w, "{}", cols.join(","))?;
    for ((t, v), reg) in path.times.iter().zip(&path.values).zip(&path.v1) {
        let mut line = fmt_f64(*t);
        for x in v {
            line.push(',');
            line.push_str(&fmt_f64(*x));
        }
        line.push(',');
        line.push_str(&fmt_f64(*reg));
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// `t,level,value,regime`, one row per scaled coordinate.
pub fn write_scaled_csv(w: &mut impl Write, snapshots: &[DiffusionSnapshot], regime: Regime) -> io::Result<()> {
    writeln!(w, "t,level,value,regime")?;
    for s in snapshots {
        for (level, value) in &s.scaled {
            writeln!(w, "{},{level},{},{regime}", fmt_f64(s.time), fmt_f64(*value))?;
        }
    }
    Ok(())
}

pub const LOSS_HEADER: &str = "N,B,lambdaN,d,n,beta,loss_emp,lower,upper,asymptotic,sqrtN_loss";

pub fn loss_row(r: &LossReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        r.pools,
        r.buffer,
        fmt_f64(r.arrival_rate),
        r.d,
        r.n,
        fmt_f64(r.beta),
        fmt_f64(r.loss_emp),
        fmt_f64(r.lower),
        fmt_f64(r.upper),
        fmt_f64(r.asymptotic),
        fmt_f64(r.sqrt_n_loss)
    )
}

pub fn write_loss_csv(w: &mut impl Write, reports: &[LossReport]) -> io::Result<()> {
    writeln!(w, "{LOSS_HEADER}")?;
    for r in reports {
        writeln!(w, "{}", loss_row(r))?;
    }
    Ok(())
}

/// An ordered flat `key=value` record. `#` starts a comment line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn new() -> Self {
        KeyValues::default()
    }

    /// Sets `key`, replacing an earlier value in place.
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key=value, found '{line}'", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Parse(format!("line {}: empty key", n + 1)));
            }
            if kv.get(k).is_some() {
                return Err(Error::Parse(format!("line {}: duplicate key '{k}'", n + 1)));
            }
            kv.set(k, v.trim());
        }
        Ok(kv)
    }

    pub fn write(&self, w: &mut impl Write) -> io::Result<()> {
        for (k, v) in &self.entries {
            writeln!(w, "{k}={v}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = Vec::new();
        self.write(&mut out).expect("writing to memory");
        String::from_utf8(out).expect("keys and values are strings")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::simulate;
    use crate::model::SystemParams;
    use crate::policies::PolicySpec;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 2.5, 1e-300, 123456789.123, -0.0, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(fmt_f64(2.5), "2.5000000000000000e0");
    }

    #[test]
    fn trajectory_round_trip() {
        let p = SystemParams::with_load(20, Buffer::Finite(3), 1.7).unwrap();
        let q0 = OccupancyState::empty(20, Buffer::Finite(3)).unwrap();
        let t = simulate(&p, &PolicySpec::jsq_d(2), 5.0, &q0, 3).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &t).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,kind,level,Q1,Q2,Q3\n"));
        let rows = read_trajectory_csv(text.as_bytes(), 20, Buffer::Finite(3)).unwrap();
        assert_eq!(rows.states.len(), t.events.len() + 1);
        let mut i = 0;
        t.replay(|time, _, s| {
            assert_eq!(rows.times[i], time);
            assert_eq!(&rows.states[i], s);
            i += 1;
        });
        assert!(read_trajectory_csv("a,b\n".as_bytes(), 20, Buffer::Finite(3)).is_err());
        assert!(read_trajectory_csv("t,kind,level,Q1\n0,initial,0,21\n".as_bytes(), 20, Buffer::Finite(3)).is_err());
    }

    #[test]
    fn key_values() {
        let kv = KeyValues::parse("# run\nN = 100\n\nlambda=2.5\npolicy=jsqd:d=log\n").unwrap();
        assert_eq!(kv.get("N"), Some("100"));
        assert_eq!(kv.get("policy"), Some("jsqd:d=log"));
        assert_eq!(kv.len(), 3);
        let back = KeyValues::parse(&kv.to_text()).unwrap();
        assert_eq!(back, kv);
        assert!(KeyValues::parse("novalue").is_err());
        assert!(KeyValues::parse("a=1\na=2").is_err());
        assert!(KeyValues::parse("=1").is_err());
    }
}
