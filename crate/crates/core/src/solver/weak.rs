//! Residual of the weak formulation along a computed trajectory.
//!
//! For a test function `φ` compactly supported in the interior,
//!
//! `R = ∫u(t₂)φ(t₂) − ∫u(t₁)φ(t₁) − ∫∫u ∂tφ + ∫∫(M∇u + E g(u))·∇φ − ∫∫fφ`,
//!
//! with `u` reconstructed piecewise constant in time (right endpoint), the
//! diffusion pairing taken through the scheme's two-point fluxes, and `φ`,
//! `∂tφ`, `∇φ` sampled at cell centres and interval midpoints.

use crate::error::{invalid, Result};
use crate::field::{Grid, MAX_DIM};
use crate::model::ProblemSpec;
use crate::par::Exec;

use super::diffusion::DiffusionOperator;
use super::stepper::Trajectory;

/// Smooth space-time test function with an axis-aligned support box.
pub trait TestFunction: Sync {
    fn value(&self, t: f64, x: &[f64; MAX_DIM]) -> f64;
    fn time_derivative(&self, t: f64, x: &[f64; MAX_DIM]) -> f64;
    fn gradient(&self, t: f64, x: &[f64; MAX_DIM]) -> [f64; MAX_DIM];
    /// Closed support box `(low, high)`; `None` for the zero function.
    fn support(&self) -> Option<([f64; MAX_DIM], [f64; MAX_DIM])>;
}

pub struct ZeroTest;

impl TestFunction for ZeroTest {
    fn value(&self, _: f64, _: &[f64; MAX_DIM]) -> f64 {
        0.0
    }
    fn time_derivative(&self, _: f64, _: &[f64; MAX_DIM]) -> f64 {
        0.0
    }
    fn gradient(&self, _: f64, _: &[f64; MAX_DIM]) -> [f64; MAX_DIM] {
        [0.0; MAX_DIM]
    }
    fn support(&self) -> Option<([f64; MAX_DIM], [f64; MAX_DIM])> {
        None
    }
}

/// `cos(ωt) · Π_a ψ((x_a − c_a)/r_a)` with `ψ(s) = exp(1 − 1/(1 − s²))` on `|s| < 1`.
#[derive(Clone, Debug)]
pub struct BumpTest {
    pub dim: usize,
    pub center: [f64; MAX_DIM],
    pub radius: [f64; MAX_DIM],
    pub omega: f64,
}

impl BumpTest {
    /// Bump centred in the box reaching `fraction` of the way to each wall.
    pub fn centered(grid: &Grid, fraction: f64, omega: f64) -> Self {
        let mut radius = [1.0; MAX_DIM];
        for a in 0..grid.dim() {
            radius[a] = 0.5 * grid.extents()[a] * fraction;
        }
        BumpTest {
            dim: grid.dim(),
            center: grid.center(),
            radius,
            omega,
        }
    }

    fn profile(s: f64) -> (f64, f64) {
        if s.abs() >= 1.0 {
            return (0.0, 0.0);
        }
        let q = 1.0 - s * s;
        let v = (1.0 - 1.0 / q).exp();
        (v, v * (-2.0 * s / (q * q)))
    }

    fn spatial(&self, x: &[f64; MAX_DIM]) -> (f64, [f64; MAX_DIM]) {
        let mut vals = [1.0; MAX_DIM];
        let mut ders = [0.0; MAX_DIM];
        for a in 0..self.dim {
            let (v, d) = Self::profile((x[a] - self.center[a]) / self.radius[a]);
            vals[a] = v;
            ders[a] = d / self.radius[a];
        }
        let value: f64 = vals[..self.dim].iter().product();
        let mut grad = [0.0; MAX_DIM];
        for a in 0..self.dim {
            grad[a] = ders[a] * (0..self.dim).filter(|&b| b != a).map(|b| vals[b]).product::<f64>();
        }
        (value, grad)
    }
}

impl TestFunction for BumpTest {
    fn value(&self, t: f64, x: &[f64; MAX_DIM]) -> f64 {
        (self.omega * t).cos() * self.spatial(x).0
    }
    fn time_derivative(&self, t: f64, x: &[f64; MAX_DIM]) -> f64 {
        -self.omega * (self.omega * t).sin() * self.spatial(x).0
    }
    fn gradient(&self, t: f64, x: &[f64; MAX_DIM]) -> [f64; MAX_DIM] {
        let c = (self.omega * t).cos();
        let (_, g) = self.spatial(x);
        let mut out = [0.0; MAX_DIM];
        for a in 0..self.dim {
            out[a] = c * g[a];
        }
        out
    }
    fn support(&self) -> Option<([f64; MAX_DIM], [f64; MAX_DIM])> {
        let mut lo = [0.0; MAX_DIM];
        let mut hi = [0.0; MAX_DIM];
        for a in 0..self.dim {
            lo[a] = self.center[a] - self.radius[a];
            hi[a] = self.center[a] + self.radius[a];
        }
        Some((lo, hi))
    }
}

fn snapshot_index(times: &[f64], t: f64) -> Result<usize> {
    let scale = times.last().copied().unwrap_or(1.0).max(1e-300);
    times
        .iter()
        .position(|&s| (s - t).abs() <= 1e-12 * scale)
        .map_or_else(|| invalid(format!("time {t} is not a snapshot time")), Ok)
}

/// `|R|` between snapshot times `t1 < t2`.
pub fn weak_residual(traj: &Trajectory, problem: &ProblemSpec, phi: &dyn TestFunction, t1: f64, t2: f64) -> Result<f64> {
    let grid = problem.grid();
    let Some((lo, hi)) = phi.support() else {
        return Ok(0.0);
    };
    for a in 0..grid.dim() {
        if !(lo[a] > 0.0 && hi[a] < grid.extents()[a]) {
            return invalid(format!("test function support touches the boundary on axis {a}"));
        }
    }
    if !(t2 > t1) {
        return invalid(format!("need t1 < t2, got {t1} and {t2}"));
    }
    let times = traj.series.times();
    let snaps = traj.series.snapshots();
    let i1 = snapshot_index(times, t1)?;
    let i2 = snapshot_index(times, t2)?;
    for s in &snaps[i1..=i2] {
        s.usable()?;
    }

    let n = grid.n_cells();
    let vol = grid.cell_volume();
    let centers: Vec<[f64; MAX_DIM]> = (0..n).map(|i| grid.cell_center(i)).collect();
    let op = DiffusionOperator::assemble(grid.clone(), problem.diffusivity())?;
    let nl = problem.nonlinearity();
    let exec = Exec::default();

    let pairing = |k: usize, t: f64| -> f64 {
        let u = snaps[k].values();
        exec.sum(n, |i| u[i] * phi.value(t, &centers[i])) * vol
    };
    let mut residual = pairing(i2, times[i2]) - pairing(i1, times[i1]);

    for k in i1 + 1..=i2 {
        let dt = times[k] - times[k - 1];
        let tm = 0.5 * (times[k] + times[k - 1]);
        let u = snaps[k].values();
        let phi_mid: Vec<f64> = centers.iter().map(|x| phi.value(tm, x)).collect();
        let e = problem.drift().cell_values(grid, tm);
        let f = problem.source().cell_values(grid, times[k], nl.reg());

        let time_term = exec.sum(n, |i| u[i] * phi.time_derivative(tm, &centers[i])) * vol;
        let diffusion = op.bilinear(u, &phi_mid, exec);
        let drift = exec.sum(n, |i| {
            let gp = phi.gradient(tm, &centers[i]);
            let g = nl.eval(u[i]);
            (0..grid.dim()).map(|a| e[i][a] * gp[a]).sum::<f64>() * g
        }) * vol;
        let source = exec.sum(n, |i| f[i] * phi_mid[i]) * vol;
        residual += dt * (-time_term + diffusion + drift - source);
    }
    Ok(residual.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Field;
    use crate::model::{CoefficientSet, Diffusivity, DriftField, Nonlinearity, SourceField};
    use crate::solver::stepper::{run, DtPolicy, SolverConfig};
    use std::sync::Arc;

    fn drift_problem(n: usize) -> ProblemSpec {
        let g = Arc::new(Grid::unit(1, n).unwrap());
        let u0 = Field::from_fn(g.clone(), |x| {
            let s = x[0] - 0.5;
            (-(s * s) / 0.02).exp()
        })
        .unwrap();
        let coeffs = CoefficientSet {
            diffusivity: Diffusivity::from_fn(&g, |x| [0.5 + 0.3 * x[0], 1.0, 1.0]),
            drift: DriftField::Uniform([1.0, 0.0, 0.0]),
            source: SourceField::Gaussian {
                amplitude: 0.5,
                width: 0.1,
                center: [0.4, 0.0, 0.0],
            },
            u0,
        };
        ProblemSpec::new(g, coeffs, Nonlinearity::power(0.5, None).unwrap(), 0.1, 0.5, 1.0).unwrap()
    }

    fn residual_for(n: usize) -> f64 {
        let p = drift_problem(n);
        let dt = 0.1 / n as f64;
        let cfg = SolverConfig {
            dt: DtPolicy::Fixed { dt },
            ..Default::default()
        };
        let traj = run(&p, &cfg).unwrap();
        let phi = BumpTest::centered(p.grid(), 0.8, 20.0);
        let times = traj.series.times();
        weak_residual(&traj, &p, &phi, times[0], *times.last().unwrap()).unwrap()
    }

    #[test]
    fn zero_test_function_gives_zero() {
        let p = drift_problem(16);
        let traj = run(&p, &SolverConfig::default()).unwrap();
        assert_eq!(weak_residual(&traj, &p, &ZeroTest, 0.0, traj.final_time()).unwrap(), 0.0);
    }

    #[test]
    fn boundary_support_is_rejected() {
        let p = drift_problem(16);
        let traj = run(&p, &SolverConfig::default()).unwrap();
        let phi = BumpTest::centered(p.grid(), 1.0, 0.0);
        assert!(weak_residual(&traj, &p, &phi, 0.0, traj.final_time()).is_err());
    }

    #[test]
    fn bump_derivatives_match_finite_differences() {
        let g = Grid::new(2, &[1.0, 2.0], &[4, 4]).unwrap();
        let phi = BumpTest::centered(&g, 0.7, 3.0);
        let x = [0.6, 0.8, 0.0];
        let h = 1e-6;
        let gr = phi.gradient(0.3, &x);
        for a in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[a] += h;
            xm[a] -= h;
            let fd = (phi.value(0.3, &xp) - phi.value(0.3, &xm)) / (2.0 * h);
            assert!((fd - gr[a]).abs() < 1e-7);
        }
        let fd = (phi.value(0.3 + h, &x) - phi.value(0.3 - h, &x)) / (2.0 * h);
        assert!((fd - phi.time_derivative(0.3, &x)).abs() < 1e-7);
    }

    #[test]
    fn residual_converges_at_first_order() {
        let r: Vec<f64> = [32, 64, 128].iter().map(|&n| residual_for(n)).collect();
        let ratios = [r[0] / r[1], r[1] / r[2]];
        for q in ratios {
            assert!((1.6..=2.5).contains(&q), "residuals {r:?}, ratios {ratios:?}");
        }
    }
}
