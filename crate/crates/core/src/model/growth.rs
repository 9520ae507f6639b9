use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A function of the system size `N`, used for the sample size `d(N)`, the
/// sloppiness `n(N)` and the alikeness scale `g(N)`. Logarithms are natural.
#[derive(Debug, Clone, PartialEq)]
pub enum GrowthSpec {
    Const(f64),
    /// `log N`
    Log,
    /// `sqrt N`
    Sqrt,
    /// `sqrt(N) log N`
    SqrtLog,
    /// `sqrt(N) / log N`
    SqrtOverLog,
    /// `sqrt(N) (log N)^2`
    SqrtLogSquared,
    /// `N`
    Linear,
    Scaled(f64, Box<GrowthSpec>),
    /// Explicit `(N, value)` pairs; evaluation at an absent `N` fails.
    Custom(Vec<(usize, f64)>),
}

impl GrowthSpec {
    pub fn scaled(self, factor: f64) -> Self {
        GrowthSpec::Scaled(factor, Box::new(self))
    }

    /// Unrounded value at `n`.
    pub fn value(&self, n: usize) -> Result<f64> {
        let x = n as f64;
        let log = x.ln();
        Ok(match self {
            GrowthSpec::Const(c) => *c,
            GrowthSpec::Log => log,
            GrowthSpec::Sqrt => x.sqrt(),
            GrowthSpec::SqrtLog => x.sqrt() * log,
            GrowthSpec::SqrtOverLog => {
                if log > 0.0 {
                    x.sqrt() / log
                } else {
                    x.sqrt()
                }
            }
            GrowthSpec::SqrtLogSquared => x.sqrt() * log * log,
            GrowthSpec::Linear => x,
            GrowthSpec::Scaled(c, inner) => c * inner.value(n)?,
            GrowthSpec::Custom(table) => table
                .iter()
                .find(|(k, _)| *k == n)
                .map(|&(_, v)| v)
                .ok_or_else(|| Error::InvalidParameter(format!("growth table has no entry for N={n}")))?,
        })
    }

    fn ceil(&self, n: usize) -> Result<f64> {
        Ok((self.value(n)? - 1e-9).ceil())
    }

    /// `d(N)`: rounded up and clamped to `[1, N]`.
    pub fn sample_size(&self, n: usize) -> Result<usize> {
        Ok(self.ceil(n)?.clamp(1.0, n as f64) as usize)
    }

    /// `n(N)`: rounded up and clamped to `[0, N - 1]`.
    pub fn sloppiness(&self, n: usize) -> Result<usize> {
        Ok(self.ceil(n)?.clamp(0.0, n.saturating_sub(1) as f64) as usize)
    }
}

impl fmt::Display for GrowthSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GrowthSpec::Const(c) => write!(f, "{c}"),
            GrowthSpec::Log => f.write_str("log"),
            GrowthSpec::Sqrt => f.write_str("sqrt"),
            GrowthSpec::SqrtLog => f.write_str("sqrtlog"),
            GrowthSpec::SqrtOverLog => f.write_str("sqrt/log"),
            GrowthSpec::SqrtLogSquared => f.write_str("sqrtlog2"),
            GrowthSpec::Linear => f.write_str("N"),
            GrowthSpec::Scaled(c, inner) => write!(f, "{c}*{inner}"),
            GrowthSpec::Custom(table) => {
                f.write_str("table:")?;
                for (i, (k, v)) in table.iter().enumerate() {
                    if i > 0 {
                        f.write_str(";")?;
                    }
                    write!(f, "{k}={v}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for GrowthSpec {
    type Err = Error;

    /// Grammar: `<number> | log | sqrt | sqrtlog | sqrt/log | sqrtlog2 | N`,
    /// optionally prefixed by `<factor>*`, or `table:N1=v1;N2=v2`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("table:") {
            let table = rest
                .split(';')
                .filter(|e| !e.is_empty())
                .map(|entry| {
                    let (k, v) = entry
                        .split_once('=')
                        .ok_or_else(|| Error::Parse(format!("table entry '{entry}' lacks '='")))?;
                    let k = k.trim().parse().map_err(|_| Error::Parse(format!("table key '{k}'")))?;
                    let v = v.trim().parse().map_err(|_| Error::Parse(format!("table value '{v}'")))?;
                    Ok((k, v))
                })
                .collect::<Result<Vec<_>>>()?;
            if table.is_empty() {
                return Err(Error::Parse("empty growth table".into()));
            }
            return Ok(GrowthSpec::Custom(table));
        }
        if let Some((factor, base)) = s.split_once('*') {
            let c: f64 = factor
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("growth factor '{factor}'")))?;
            return Ok(base.parse::<GrowthSpec>()?.scaled(c));
        }
        Ok(match s {
            "log" | "logN" => GrowthSpec::Log,
            "sqrt" | "sqrtN" => GrowthSpec::Sqrt,
            "sqrtlog" | "sqrtNlogN" => GrowthSpec::SqrtLog,
            "sqrt/log" | "sqrtoverlog" => GrowthSpec::SqrtOverLog,
            "sqrtlog2" | "sqrtlogsq" => GrowthSpec::SqrtLogSquared,
            "N" | "n" | "linear" => GrowthSpec::Linear,
            other => {
                let c: f64 = other
                    .parse()
                    .map_err(|_| Error::Parse(format!("unknown growth '{other}'")))?;
                if !(c.is_finite() && c >= 0.0) {
                    return Err(Error::Parse(format!("growth constant '{other}' must be >= 0")));
                }
                GrowthSpec::Const(c)
            }
        })
    }
}
