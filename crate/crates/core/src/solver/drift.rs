//! First-order upwind discretisation of the drift term and its stability limit.
//!
//! Face flux `J = a⁺ g(u_low) + a⁻ g(u_high)` with `a` the transport velocity
//! `−E·e_axis` at the face centre. Outside the box `g = 0`, so boundary faces
//! only ever carry outflow.

use crate::field::{Field, Grid};
use crate::model::{DriftField, FaceVelocities, Nonlinearity};
use crate::par::Exec;

/// `out_i = Σ_faces J·area / |cell|` given precomputed `g(u)` per cell.
pub fn divergence_into(grid: &Grid, vel: &FaceVelocities, g: &[f64], out: &mut [f64], exec: Exec) {
    let dim = grid.dim();
    exec.fill(out, |i| {
        let mut d = 0.0;
        for a in 0..dim {
            let lo = vel.low(grid, i, a);
            let hi = vel.high(grid, i, a);
            let g_below = grid.neighbor(i, a, false).map_or(0.0, |j| g[j]);
            let g_above = grid.neighbor(i, a, true).map_or(0.0, |j| g[j]);
            let j_lo = lo.max(0.0) * g_below + lo.min(0.0) * g[i];
            let j_hi = hi.max(0.0) * g[i] + hi.min(0.0) * g_above;
            d += (j_hi - j_lo) / grid.spacing()[a];
        }
        d
    });
}

/// Discrete `div(−E g(u))` at time `t`.
pub fn drift_divergence(field: &Field, drift: &DriftField, nonlinearity: &Nonlinearity, t: f64) -> Field {
    let grid = field.grid();
    let vel = drift.face_velocities(grid, t);
    let g: Vec<f64> = field.values().iter().map(|&s| nonlinearity.eval(s)).collect();
    let mut out = vec![0.0; grid.n_cells()];
    divergence_into(grid, &vel, &g, &mut out, Exec::Sequential);
    Field::new(grid.clone(), out).expect("finite input gives finite divergence")
}

/// `max_i Σ_axes (outflow through the low face + outflow through the high face) / Δx`.
pub fn outflow_rate(grid: &Grid, vel: &FaceVelocities, exec: Exec) -> f64 {
    exec.max(grid.n_cells(), 0.0, |i| {
        (0..grid.dim())
            .map(|a| ((-vel.low(grid, i, a)).max(0.0) + vel.high(grid, i, a).max(0.0)) / grid.spacing()[a])
            .sum()
    })
}

/// Largest explicit drift step keeping the update monotone, scaled by `safety`;
/// `+∞` when the drift or the field vanishes.
pub fn cfl_limit(grid: &Grid, vel: &FaceVelocities, nonlinearity: &Nonlinearity, u_linf: f64, safety: f64, exec: Exec) -> f64 {
    let rate = outflow_rate(grid, vel, exec) * nonlinearity.derivative_bound(u_linf);
    if u_linf == 0.0 || rate == 0.0 {
        f64::INFINITY
    } else {
        safety / rate
    }
}

/// CFL step for `field` under `drift` at time `t`, capped at `dt_max`.
pub fn cfl_dt(field: &Field, drift: &DriftField, nonlinearity: &Nonlinearity, t: f64, safety: f64, dt_max: f64) -> f64 {
    let grid = field.grid();
    let vel = drift.face_velocities(grid, t);
    let linf = field.values().iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    cfl_limit(grid, &vel, nonlinearity, linf, safety, Exec::Sequential).min(dt_max)
}
