use crate::error::{out_of_range, Error, Result};

use super::{Buffer, ServiceMode};

/// Snaps `x` to the nearest integer when it is within rounding noise of it.
pub(crate) fn snap_floor(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-12 * x.abs().max(1.0) {
        r
    } else {
        x.floor()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    pub pools: usize,
    pub buffer: Buffer,
    /// Total arrival rate `lambda(N)`.
    pub arrival_rate: f64,
    pub service: ServiceMode,
}

impl SystemParams {
    pub fn new(pools: usize, buffer: Buffer, arrival_rate: f64, service: ServiceMode) -> Result<Self> {
        if pools == 0 {
            return Err(out_of_range("pools", 0, ">= 1"));
        }
        if let Buffer::Finite(0) = buffer {
            return Err(out_of_range("buffer", 0, ">= 1"));
        }
        if !(arrival_rate.is_finite() && arrival_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "arrival rate must be positive and finite, got {arrival_rate}"
            )));
        }
        Ok(SystemParams {
            pools,
            buffer,
            arrival_rate,
            service,
        })
    }

    /// Infinite-server system with per-pool load `lambda`, i.e. `lambda(N) = lambda * N`.
    pub fn with_load(pools: usize, buffer: Buffer, lambda: f64) -> Result<Self> {
        Self::new(pools, buffer, lambda * pools as f64, ServiceMode::InfiniteServer)
    }

    /// Per-pool load `lambda = lambda(N) / N`.
    pub fn lambda(&self) -> f64 {
        self.arrival_rate / self.pools as f64
    }

    /// `K = floor(lambda)`.
    pub fn k(&self) -> usize {
        snap_floor(self.lambda()) as usize
    }

    /// Fractional part `f = lambda - K`.
    pub fn f(&self) -> f64 {
        (self.lambda() - self.k() as f64).max(0.0)
    }

    /// `f(N) = lambda(N) - K N`.
    pub fn f_n(&self) -> f64 {
        self.arrival_rate - (self.k() * self.pools) as f64
    }

    pub fn sqrt_n(&self) -> f64 {
        (self.pools as f64).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_load_quantities() {
        let p = SystemParams::with_load(10_000, Buffer::Finite(5), 2.5).unwrap();
        assert_eq!(p.arrival_rate, 25_000.0);
        assert_eq!(p.k(), 2);
        assert_eq!(p.f(), 0.5);
        assert_eq!(p.f_n(), 5_000.0);

        let q = SystemParams::new(3, Buffer::Finite(4), 9.0, ServiceMode::InfiniteServer).unwrap();
        assert_eq!(q.k(), 3);
        assert_eq!(q.f(), 0.0);
    }

    #[test]
    fn rejects_nonpositive_rate() {
        assert!(SystemParams::new(1, Buffer::Finite(1), 0.0, ServiceMode::InfiniteServer).is_err());
        assert!(SystemParams::new(1, Buffer::Finite(1), f64::NAN, ServiceMode::InfiniteServer).is_err());
        assert!(SystemParams::new(0, Buffer::Finite(1), 1.0, ServiceMode::InfiniteServer).is_err());
    }
}
