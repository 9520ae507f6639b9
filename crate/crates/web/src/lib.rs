//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export returns a flat row-major `Float64Array`; the row width is
//! documented per function.

use poold::analytics::{asymptotic_scaled_loss, loss_bounds, ModifiedRate};
use poold::limits::{integrate_fluid_recorded, simulate_reflected, Noise, ReflectedOptions};
use poold::model::{Buffer, FluidState, ServiceMode, SystemParams};
use wasm_bindgen::prelude::*;

/// Rows recorded along a path at most.
const MAX_ROWS: usize = 2000;

fn record_every(horizon: f64, step: f64) -> usize {
    ((horizon / step / MAX_ROWS as f64).ceil() as usize).max(1)
}

/// Fluid path from the empty state; rows `t, q_1, ..., q_B`.
pub fn fluid_rows(lambda: f64, buffer: usize, horizon: f64, step: f64) -> Result<Vec<f64>, String> {
    if buffer == 0 {
        return Err("B must be at least 1".into());
    }
    let q0 = FluidState::zeros(buffer, Buffer::Finite(buffer));
    let path = integrate_fluid_recorded(&q0, lambda, ServiceMode::InfiniteServer, horizon, step, record_every(horizon, step))
        .map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(path.times.len() * (buffer + 1));
    for (t, q) in path.times.iter().zip(&path.states) {
        out.push(*t);
        out.extend((1..=buffer).map(|i| q.get(i)));
    }
    Ok(out)
}

/// Reflected diffusion from `zeta = (0, 0)`; rows `t, zeta1, zeta2, V1`.
/// A negative `seed` switches the noise off.
pub fn reflected_rows(beta: f64, k: usize, horizon: f64, step: f64, seed: f64) -> Result<Vec<f64>, String> {
    let noise = if seed < 0.0 { Noise::Off } else { Noise::Seeded(seed as u64) };
    let opts = ReflectedOptions {
        k,
        beta,
        horizon,
        step,
        tail: Vec::new(),
    };
    let path = simulate_reflected((0.0, 0.0), &opts, noise).map_err(|e| e.to_string())?;
    let every = record_every(horizon, step);
    let mut out = Vec::new();
    for j in (0..path.times.len()).filter(|j| j % every == 0 || *j + 1 == path.times.len()) {
        out.extend([path.times[j], path.values[j][0], path.values[j][1], path.v1[j]]);
    }
    Ok(out)
}

/// Loss bounds at `lambdaN = B N - beta sqrt N` for `d` from 1 to `N` on a
/// roughly geometric grid; rows `d, lower, upper, sqrtN * upper`.
pub fn loss_rows(pools: usize, buffer: usize, beta: f64) -> Result<Vec<f64>, String> {
    if pools == 0 || buffer == 0 {
        return Err("N and B must be at least 1".into());
    }
    let rate = (buffer * pools) as f64 - beta * (pools as f64).sqrt();
    let p = SystemParams::new(pools, Buffer::Finite(buffer), rate, ServiceMode::InfiniteServer).map_err(|e| e.to_string())?;
    let mut ds: Vec<usize> = (0..=60).map(|j| (pools as f64).powf(j as f64 / 60.0).round() as usize).collect();
    ds.dedup();
    let mut out = Vec::with_capacity(ds.len() * 4);
    for d in ds {
        let b = loss_bounds(&p, 0, d, ModifiedRate::Admitted).map_err(|e| e.to_string())?;
        out.extend([d as f64, b.lower, b.upper, p.sqrt_n() * b.upper]);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn fluid_path(lambda: f64, buffer: usize, horizon: f64, step: f64) -> Result<Vec<f64>, JsError> {
    fluid_rows(lambda, buffer, horizon, step).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn reflected_path(beta: f64, k: usize, horizon: f64, step: f64, seed: f64) -> Result<Vec<f64>, JsError> {
    reflected_rows(beta, k, horizon, step, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn loss_curve(pools: usize, buffer: usize, beta: f64) -> Result<Vec<f64>, JsError> {
    loss_rows(pools, buffer, beta).map_err(|e| JsError::new(&e))
}

/// `phi(beta) / (sqrt(B) Phi(beta))`, or NaN for `B = 0`.
#[wasm_bindgen]
pub fn scaled_loss_limit(buffer: usize, beta: f64) -> f64 {
    asymptotic_scaled_loss(buffer, beta).unwrap_or(f64::NAN)
}
