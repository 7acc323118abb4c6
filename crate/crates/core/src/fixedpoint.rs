//! Small-data existence by iterating the frozen-drift map.
//!
//! `F(v)` solves the linear problem `∂t u − div(M∇u) = div(E g(v)) + f` with
//! the datum and boundary values of the full problem. Discretely the drift
//! flux is the upwind flux of the nonlinear scheme evaluated at `v` on the
//! left time level, so a fixed point of `F` on a time grid is exactly the
//! nonlinear run on that grid.
//!
//! Picard iteration from `v ≡ 0` replaces the non-constructive existence
//! argument; the invariant-ball arithmetic that drives it lives in
//! [`BallParams`].

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimates::{q_star_star, smallness_check, Smallness};
use crate::field::{Field, SpaceTimeSeries};
use crate::model::ProblemSpec;
use crate::solver::{DtPolicy, SolverConfig, Stepper};

/// Norm level above which an iterate counts as diverged.
pub const DIVERGENCE_NORM: f64 = 1e8;

/// Radius of the ball mapped into itself by `s ↦ δ s^{θ+1} + K`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallParams {
    pub delta: f64,
    pub k_term: f64,
    pub theta: f64,
    /// `R = (δ(θ+1))^{−1/θ}`.
    pub radius: f64,
    /// Largest admissible `K`, `R θ/(θ+1)`.
    pub k_delta: f64,
}

impl BallParams {
    pub fn new(delta: f64, k_term: f64, theta: f64) -> Result<Self> {
        if !(delta > 0.0 && theta > 0.0 && k_term >= 0.0 && delta.is_finite() && theta.is_finite() && k_term.is_finite()) {
            return invalid(format!("need delta > 0, theta > 0, K >= 0; got {delta}, {theta}, {k_term}"));
        }
        let (radius, k_delta) = ball_radii(delta, theta);
        if !(radius.is_finite() && radius > 0.0) {
            return invalid(format!("radius overflows for delta = {delta}, theta = {theta}"));
        }
        Ok(BallParams {
            delta,
            k_term,
            theta,
            radius,
            k_delta,
        })
    }

    /// `K ≤ K_δ`: the ball of radius `R` is invariant.
    pub fn invariant(&self) -> bool {
        self.k_term <= self.k_delta
    }

    /// `|δR^{θ+1} + K_δ − R| / R`, zero in exact arithmetic.
    pub fn identity_error(&self) -> f64 {
        let lhs = self.delta * self.radius.powf(self.theta + 1.0) + self.k_delta;
        (lhs - self.radius).abs() / self.radius
    }
}

/// `(R, K_δ)` for the given `δ` and `θ`.
pub fn ball_radii(delta: f64, theta: f64) -> (f64, f64) {
    let radius = (delta * (theta + 1.0)).powf(-1.0 / theta);
    (radius, radius * theta / (theta + 1.0))
}

/// `δ s^{θ+1} + K ≤ R`. Inputs outside `δ > 0, θ > 0, s ≥ 0, K ≥ 0` give `false`.
pub fn ball_check(delta: f64, k: f64, theta: f64, s: f64) -> bool {
    if !(delta > 0.0 && theta > 0.0 && s >= 0.0 && k >= 0.0) {
        return false;
    }
    let (radius, _) = ball_radii(delta, theta);
    delta * s.powf(theta + 1.0) + k <= radius
}

/// Times `0 = t_0 < … < t_n = T` produced by stepping `problem` with a fixed
/// step `dt`, identical to those of a run with `DtPolicy::Fixed { dt }`.
pub fn uniform_time_grid(horizon: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0 && horizon > 0.0 && dt.is_finite() && horizon.is_finite()) {
        return invalid(format!("need positive step and horizon, got {dt} and {horizon}"));
    }
    let mut times = vec![0.0];
    let mut t = 0.0;
    loop {
        let remaining = horizon - t;
        if remaining <= 1e-12 * horizon {
            break;
        }
        let step = if dt >= remaining * (1.0 - 1e-9) { remaining } else { dt };
        t += step;
        times.push(t);
    }
    Ok(times)
}

/// Step used for the iteration: the fixed step, or the adaptive step at `t = 0`.
pub fn picard_step(problem: &ProblemSpec, config: &SolverConfig) -> Result<f64> {
    match config.dt {
        DtPolicy::Fixed { dt } => Ok(dt),
        DtPolicy::Adaptive { .. } => Ok(Stepper::new(problem, config)?.policy_dt()),
    }
}

fn check_series(v: &SpaceTimeSeries, problem: &ProblemSpec) -> Result<()> {
    if v.grid().as_ref() != problem.grid().as_ref() {
        return Err(Error::GridMismatch("iterate lives on a different grid".into()));
    }
    let horizon = problem.horizon();
    if v.len() < 2 || (v.final_time() - horizon).abs() > 1e-9 * horizon {
        return Err(Error::GridMismatch(format!(
            "iterate must span [0, {horizon}] with at least one step, ends at {}",
            v.final_time()
        )));
    }
    Ok(())
}

/// `F(v)` on the time grid of `v`. The growth cap is ignored; `cap_linf`
/// still applies and is reported as [`Error::BlowUp`].
pub fn apply_f(v: &SpaceTimeSeries, problem: &ProblemSpec, config: &SolverConfig) -> Result<SpaceTimeSeries> {
    check_series(v, problem)?;
    let config = SolverConfig {
        growth_cap: None,
        ..config.clone()
    };
    let mut stepper = Stepper::new(problem, &config)?;
    let times = v.times();
    let mut snapshots = Vec::with_capacity(times.len());
    snapshots.push(stepper.field());
    for (k, frozen) in v.snapshots()[..times.len() - 1].iter().enumerate() {
        frozen.usable()?;
        let out = stepper.advance_frozen(times[k + 1] - times[k], frozen.values())?;
        if let Some(reason) = out.blowup {
            return Err(Error::BlowUp {
                time: stepper.time(),
                reason: format!("{reason:?}"),
            });
        }
        snapshots.push(stepper.field());
    }
    SpaceTimeSeries::from_parts(times.to_vec(), snapshots)
}

/// Cell-wise difference of two series on the same grid and times.
fn difference(a: &SpaceTimeSeries, b: &SpaceTimeSeries) -> Result<SpaceTimeSeries> {
    if a.times() != b.times() {
        return Err(Error::GridMismatch("iterates on different time grids".into()));
    }
    let snaps = a
        .snapshots()
        .iter()
        .zip(b.snapshots())
        .map(|(x, y)| x.zip_map(y, |p, q| p - q))
        .collect::<Result<Vec<_>>>()?;
    SpaceTimeSeries::from_parts(a.times().to_vec(), snaps)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardOptions {
    /// Stop once `‖v_{k+1} − v_k‖ ≤ tol ‖v_{k+1}‖`.
    pub tol: f64,
    pub max_iter: usize,
    /// Source integrability; defaults to `2(N+2)/(N+4)`.
    pub q: Option<f64>,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions {
            tol: 1e-10,
            max_iter: 50,
            q: None,
        }
    }
}

/// Lower end of the admissible source exponents, `2(N+2)/(N+4)`.
pub fn default_q(dim: usize) -> f64 {
    let n = dim as f64;
    2.0 * (n + 2.0) / (n + 4.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardReport {
    /// Space-time exponent `q⋆⋆` of every norm below.
    pub exponent: f64,
    pub dt: f64,
    pub steps: usize,
    /// `‖v_k‖` for `k = 1..=iterations`.
    pub iterates: Vec<f64>,
    /// `‖v_{k+1} − v_k‖` for `k = 1..iterations`.
    pub diffs: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Norm growth past [`DIVERGENCE_NORM`] or a blow-up inside `F`.
    pub diverged: bool,
    pub note: Option<String>,
}

impl PicardReport {
    pub fn final_norm(&self) -> Option<f64> {
        self.iterates.last().copied()
    }

    /// `diffs[k+1] / diffs[k]`.
    pub fn diff_ratios(&self) -> Vec<f64> {
        self.diffs.windows(2).map(|w| w[1] / w[0]).collect()
    }

    /// Rows `k,norm_qss,diff`; the first iterate has no difference.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "norm_qss", "diff"])?;
        for (k, norm) in self.iterates.iter().enumerate() {
            let diff = if k == 0 { String::new() } else { self.diffs[k - 1].to_string() };
            w.write_record([(k + 1).to_string(), norm.to_string(), diff])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Iterate `v_{k+1} = F(v_k)` from `v_0 ≡ 0` on a uniform grid with the step
/// of [`picard_step`]. Divergence is reported, not raised; the last
/// computed iterate is returned either way.
pub fn picard_iterate(problem: &ProblemSpec, config: &SolverConfig, opts: &PicardOptions) -> Result<(SpaceTimeSeries, PicardReport)> {
    if !(opts.tol > 0.0) || opts.max_iter < 2 {
        return invalid(format!("need tol > 0 and max_iter >= 2, got {} and {}", opts.tol, opts.max_iter));
    }
    let dim = problem.grid().dim();
    let q = opts.q.unwrap_or_else(|| default_q(dim));
    if !(q >= 1.0 && q < (dim as f64 + 2.0) / 2.0) {
        return invalid(format!("q must lie in [1, (N+2)/2), got {q}"));
    }
    let exponent = q_star_star(dim, q);
    let dt = picard_step(problem, config)?;
    let times = uniform_time_grid(problem.horizon(), dt)?;
    let zeros = vec![Field::zeros(problem.grid().clone()); times.len()];
    let mut current = SpaceTimeSeries::from_parts(times.clone(), zeros)?;

    let mut report = PicardReport {
        exponent,
        dt,
        steps: times.len() - 1,
        iterates: Vec::new(),
        diffs: Vec::new(),
        converged: false,
        iterations: 0,
        diverged: false,
        note: None,
    };
    for k in 1..=opts.max_iter {
        let next = match apply_f(&current, problem, config) {
            Ok(s) => s,
            Err(e @ Error::BlowUp { .. }) => {
                report.diverged = true;
                report.note = Some(format!("iteration {k}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let norm = next.lp_norm(exponent)?;
        report.iterates.push(norm);
        report.iterations = k;
        let diff = if k > 1 {
            let d = difference(&next, &current)?.lp_norm(exponent)?;
            report.diffs.push(d);
            Some(d)
        } else {
            None
        };
        current = next;
        if diff.is_some_and(|d| d <= opts.tol * norm) {
            report.converged = true;
            break;
        }
        if !(norm <= DIVERGENCE_NORM) {
            report.diverged = true;
            report.note = Some(format!("iteration {k}: norm {norm:e} exceeds {DIVERGENCE_NORM:e}"));
            break;
        }
    }
    if !report.converged && !report.diverged {
        report.note = Some(format!("no convergence within {} iterations", opts.max_iter));
    }
    Ok((current, report))
}

/// Data norms entering the smallness condition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataNorms {
    /// `‖E‖_{L^r(Ω_T)}`.
    pub drift: f64,
    /// `‖f‖_{L^q(Ω_T)}`.
    pub source: f64,
    /// `‖u0‖_{L^p(Ω)}` with `p = q⋆⋆N/(N+2)`.
    pub datum: f64,
    pub r: f64,
    pub q: f64,
    pub datum_exponent: f64,
}

/// Norms of the data over `times` (right-endpoint weights in time);
/// `r = ∞` takes the supremum over all listed times.
pub fn data_norms(problem: &ProblemSpec, times: &[f64], q: f64, r: f64) -> Result<DataNorms> {
    let dim = problem.grid().dim();
    if !(q >= 1.0 && q < (dim as f64 + 2.0) / 2.0 && r >= 1.0) {
        return invalid(format!("need q in [1, (N+2)/2) and r >= 1, got {q} and {r}"));
    }
    if times.len() < 2 || times.windows(2).any(|w| !(w[1] > w[0])) {
        return invalid("need at least two increasing times");
    }
    let grid = problem.grid();
    let vol = grid.cell_volume();
    let drift = problem.drift();
    let reg = problem.nonlinearity().reg();
    let steps = || times.windows(2).map(|w| (w[1], w[1] - w[0]));
    let drift_norm = if r.is_infinite() {
        times.iter().map(|&t| drift.lr_norm(grid, t, r)).fold(0.0, f64::max)
    } else {
        steps()
            .map(|(t, dt)| dt * drift.lr_norm(grid, t, r).powf(r))
            .sum::<f64>()
            .powf(1.0 / r)
    };
    let source = steps()
        .map(|(t, dt)| {
            dt * problem
                .source()
                .cell_values(grid, t, reg)
                .iter()
                .map(|v| v.abs().powf(q))
                .sum::<f64>()
                * vol
        })
        .sum::<f64>()
        .powf(1.0 / q);
    let datum_exponent = q_star_star(dim, q) * dim as f64 / (dim as f64 + 2.0);
    Ok(DataNorms {
        drift: drift_norm,
        source,
        datum: problem.u0().lp_norm(datum_exponent)?,
        r,
        q,
        datum_exponent,
    })
}

/// Smallness condition evaluated on the data of `problem`.
pub fn data_smallness(norms: &DataNorms, theta: f64, c: f64) -> Result<Smallness> {
    smallness_check(theta, norms.drift, norms.source, norms.datum, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use crate::model::{make_problem, DriftField, Preset, PresetOptions, SourceField};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn ball_examples() {
        let (r, k) = ball_radii(1.0, 1.0);
        assert_eq!((r, k), (0.5, 0.25));
        assert!(ball_check(1.0, 0.25, 1.0, 0.5));
        assert!(!ball_check(1.0, 0.3, 1.0, 0.49));
        for (d, t) in [(0.1, 0.2), (3.0, 4.0), (10.0, 5.0)] {
            assert!(ball_check(d, 0.0, t, 0.0));
        }
        assert!(BallParams::new(1.0, 0.25, 1.0).unwrap().invariant());
        assert!(!BallParams::new(1.0, 0.3, 1.0).unwrap().invariant());
        assert!(BallParams::new(0.0, 0.1, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn ball_identity_closes(delta in 1e-3f64..=10.0, theta in 1e-2f64..=5.0) {
            let b = BallParams::new(delta, 0.0, theta).unwrap();
            prop_assert!(b.identity_error() <= 1e-12, "{b:?}");
        }

        #[test]
        fn ball_check_is_monotone(delta in 1e-2f64..10.0, theta in 0.05f64..5.0, s in 0.0f64..2.0, k in 0.0f64..2.0, ds in 0.0f64..1.0, dk in 0.0f64..1.0) {
            if !ball_check(delta, k, theta, s) {
                prop_assert!(!ball_check(delta, k, theta, s + ds));
                prop_assert!(!ball_check(delta, k + dk, theta, s));
            }
        }
    }

    #[test]
    fn time_grid_matches_a_fixed_step_run() {
        let g = Arc::new(Grid::unit(1, 16).unwrap());
        let p = make_problem(
            Preset::Heat,
            g,
            PresetOptions {
                horizon: 0.1,
                ..Default::default()
            },
        )
        .unwrap();
        let dt = 0.0123;
        let traj = crate::solver::run(
            &p,
            &SolverConfig {
                dt: DtPolicy::Fixed { dt },
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(traj.series.times(), uniform_time_grid(0.1, dt).unwrap());
    }

    fn small_problem(drift: DriftField, source: SourceField) -> ProblemSpec {
        let g = Arc::new(Grid::unit(2, 12).unwrap());
        make_problem(
            Preset::PowerDrift,
            g,
            PresetOptions {
                theta: Some(0.5),
                mass: 0.2,
                width: Some(0.15),
                horizon: 0.05,
                drift: Some(drift),
                source: Some(source),
                ..Default::default()
            },
        )
        .unwrap()
    }

    fn random_series(p: &ProblemSpec, seed: u64) -> SpaceTimeSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let times = uniform_time_grid(p.horizon(), 0.005).unwrap();
        let n = p.grid().n_cells();
        let snaps = times
            .iter()
            .map(|_| Field::new(p.grid().clone(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap())
            .collect();
        SpaceTimeSeries::from_parts(times, snaps).unwrap()
    }

    #[test]
    fn without_drift_the_map_ignores_its_argument() {
        let p = small_problem(DriftField::Zero, SourceField::Constant(0.5));
        let cfg = SolverConfig::default();
        let a = apply_f(&random_series(&p, 1), &p, &cfg).unwrap();
        let b = apply_f(&random_series(&p, 2), &p, &cfg).unwrap();
        for (x, y) in a.snapshots().iter().zip(b.snapshots()) {
            assert_eq!(x.values(), y.values());
        }
        let (_, rep) = picard_iterate(&p, &cfg, &PicardOptions::default()).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 2);
        assert_eq!(rep.diffs, vec![0.0]);
    }

    #[test]
    fn the_map_is_affine_in_the_source() {
        let drift = DriftField::Uniform([0.7, -0.4, 0.0]);
        let p1 = small_problem(drift.clone(), SourceField::custom(bump_value, false));
        let p2 = small_problem(drift, SourceField::custom(move |t, x| 2.0 * bump_value(t, x), false));
        let heat = small_problem(DriftField::Zero, SourceField::custom(bump_value, false))
            .with_u0(Field::zeros(p1.grid().clone()))
            .unwrap();
        let cfg = SolverConfig::default();
        let v = random_series(&p1, 3);
        let zero = SpaceTimeSeries::from_parts(v.times().to_vec(), vec![Field::zeros(p1.grid().clone()); v.len()]).unwrap();
        let f1 = apply_f(&v, &p1, &cfg).unwrap();
        let f2 = apply_f(&v, &p2, &cfg).unwrap();
        let h = apply_f(&zero, &heat, &cfg).unwrap();
        let d = difference(&f2, &f1).unwrap();
        let err = difference(&d, &h).unwrap().lp_norm(2.0).unwrap();
        assert!(err <= 1e-10 * h.lp_norm(2.0).unwrap(), "err {err}");
    }

    fn bump_value(_: f64, x: &[f64; crate::field::MAX_DIM]) -> f64 {
        let r2 = (x[0] - 0.4).powi(2) + (x[1] - 0.6).powi(2);
        2.0 * (-r2 / (2.0 * 0.01)).exp()
    }

    #[test]
    fn small_data_converges_to_the_nonlinear_run() {
        let p = small_problem(DriftField::Uniform([1.0, 0.5, 0.0]), SourceField::Zero);
        let cfg = SolverConfig {
            dt: DtPolicy::Fixed { dt: 2e-3 },
            ..Default::default()
        };
        let (u, rep) = picard_iterate(&p, &cfg, &PicardOptions::default()).unwrap();
        assert!(rep.converged, "{rep:?}");
        assert!(rep.iterations <= 20);
        assert_eq!(rep.diffs.len(), rep.iterations - 1);
        let direct = crate::solver::run(&p, &cfg).unwrap();
        assert_eq!(direct.series.times(), u.times());
        let gap = difference(&direct.series, &u).unwrap().lp_norm(1.0).unwrap();
        assert!(gap <= 1e-9 * direct.series.lp_norm(1.0).unwrap(), "gap {gap}");
    }

    #[test]
    fn large_data_is_reported_as_divergent() {
        let g = Arc::new(Grid::unit(1, 32).unwrap());
        let p = make_problem(
            Preset::PowerDrift,
            g,
            PresetOptions {
                theta: Some(2.0),
                reg: None,
                mass: 50.0,
                width: Some(0.05),
                horizon: 0.05,
                drift: Some(DriftField::Uniform([200.0, 0.0, 0.0])),
                ..Default::default()
            },
        )
        .unwrap();
        let cfg = SolverConfig {
            dt: DtPolicy::Fixed { dt: 1e-3 },
            ..Default::default()
        };
        let (_, rep) = picard_iterate(
            &p,
            &cfg,
            &PicardOptions {
                max_iter: 10,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!rep.converged, "{rep:?}");
        assert!(rep.note.is_some());
    }

    #[test]
    fn mismatched_iterates_are_rejected() {
        let p = small_problem(DriftField::Zero, SourceField::Zero);
        let short = p.clone().with_horizon(0.02).unwrap();
        let v = random_series(&short, 4);
        assert!(matches!(apply_f(&v, &p, &SolverConfig::default()), Err(Error::GridMismatch(_))));
        let other = Arc::new(Grid::unit(2, 8).unwrap());
        let w = SpaceTimeSeries::from_parts(vec![0.0, 0.05], vec![Field::zeros(other.clone()), Field::zeros(other)]).unwrap();
        assert!(matches!(apply_f(&w, &p, &SolverConfig::default()), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn data_norms_of_a_constant_field() {
        let g = Arc::new(Grid::unit(2, 8).unwrap());
        let p = make_problem(
            Preset::PowerDrift,
            g,
            PresetOptions {
                theta: Some(0.5),
                horizon: 0.5,
                drift: Some(DriftField::Uniform([0.6, 0.8, 0.0])),
                source: Some(SourceField::Constant(2.0)),
                ..Default::default()
            },
        )
        .unwrap();
        let times = uniform_time_grid(0.5, 0.1).unwrap();
        let n = data_norms(&p, &times, 4.0 / 3.0, 8.0).unwrap();
        assert!((n.drift - 0.5f64.powf(1.0 / 8.0)).abs() < 1e-12);
        assert!((n.source - 2.0 * 0.5f64.powf(0.75)).abs() < 1e-12);
        assert!((n.datum_exponent - 2.0).abs() < 1e-12);
        let sup = data_norms(&p, &times, 4.0 / 3.0, f64::INFINITY).unwrap();
        assert!((sup.drift - 1.0).abs() < 1e-12);
        let s = data_smallness(&n, 0.5, 1.0).unwrap();
        assert!(s.lhs > 0.0 && s.threshold > 0.0);
    }
}
