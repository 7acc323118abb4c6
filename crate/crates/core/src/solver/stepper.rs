//! IMEX time stepping: backward Euler for diffusion, explicit upwind drift.
//!
//! One step solves `(I + Δt A/|cell|) u⁺ = u + Δt (−D(u) + T_n f(t + Δt))`
//! where `D` is the upwind drift divergence. Under the CFL limit the
//! explicit part is order preserving and the implicit part is an M-matrix
//! resolvent, so the whole update is monotone.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{abs_pow, Field, SpaceTimeSeries, MAX_DIM};
use crate::model::{FaceVelocities, ProblemSpec};
use crate::par::Exec;

use super::diffusion::{DiffusionOperator, SolveStats};
use super::drift::{cfl_limit, divergence_into};

/// Exponents `j` of the dyadic superlevel thresholds `2^j` recorded every step.
pub const LEVEL_EXPONENTS: std::ops::RangeInclusive<i32> = -20..=30;

pub fn superlevel_levels() -> Vec<f64> {
    LEVEL_EXPONENTS.map(|j| 2f64.powi(j)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DtPolicy {
    /// Constant step; the caller is responsible for staying below the CFL limit.
    Fixed { dt: f64 },
    /// `min(dt_max, safety · CFL)`.
    Adaptive { safety: f64, dt_max: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub dt: DtPolicy,
    /// Relative residual target of the implicit solve.
    pub lin_tol: f64,
    pub max_lin_iters: usize,
    /// Blow-up cap on `‖u‖_∞`.
    pub cap_linf: f64,
    /// Adaptive steps below this flag suspected blow-up.
    pub dt_min: f64,
    /// Flag suspected blow-up once `‖u‖_∞` exceeds this multiple of `‖u0‖_∞`.
    pub growth_cap: Option<f64>,
    /// Keep every `snapshot_stride`-th state (the final state is always kept).
    pub snapshot_stride: usize,
    /// Exponent of the extra tracked norm.
    pub norm_m: f64,
    /// Exponents at which the energy inequality terms are recorded.
    pub ineq_ms: Vec<f64>,
    pub max_steps: usize,
    pub exec: Exec,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: DtPolicy::Adaptive { safety: 0.9, dt_max: 1e-2 },
            lin_tol: 1e-12,
            max_lin_iters: 10_000,
            cap_linf: 1e8,
            dt_min: 1e-12,
            growth_cap: None,
            snapshot_stride: 1,
            norm_m: 3.0,
            ineq_ms: vec![2.0, 1.5],
            max_steps: 1_000_000,
            exec: Exec::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        match self.dt {
            DtPolicy::Fixed { dt } if !(dt > 0.0 && dt.is_finite()) => return invalid(format!("fixed step must be positive, got {dt}")),
            DtPolicy::Adaptive { safety, dt_max } => {
                if !(safety > 0.0 && safety <= 1.0) {
                    return invalid(format!("safety factor must lie in (0, 1], got {safety}"));
                }
                if !(dt_max > 0.0) {
                    return invalid(format!("dt_max must be positive, got {dt_max}"));
                }
            }
            _ => {}
        }
        if !(self.lin_tol > 0.0 && self.lin_tol <= 1e-6) {
            return invalid(format!("lin_tol must lie in (0, 1e-6], got {}", self.lin_tol));
        }
        if !(self.cap_linf > 0.0) {
            return invalid(format!("cap_linf must be positive, got {}", self.cap_linf));
        }
        if !(self.dt_min >= 0.0) {
            return invalid(format!("dt_min must be >= 0, got {}", self.dt_min));
        }
        if let Some(g) = self.growth_cap {
            if !(g > 1.0) {
                return invalid(format!("growth cap must exceed 1, got {g}"));
            }
        }
        if self.snapshot_stride == 0 || self.max_lin_iters == 0 || self.max_steps == 0 {
            return invalid("snapshot_stride, max_lin_iters and max_steps must be positive");
        }
        if !(self.norm_m >= 1.0) || self.ineq_ms.iter().any(|&m| !(m >= 1.0)) {
            return invalid("tracked norm exponents must be >= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    BlowUpSuspected,
    SolverFailure,
}

impl std::fmt::Display for RunStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RunStatus::Completed => "completed",
            RunStatus::BlowUpSuspected => "blow-up-suspected",
            RunStatus::SolverFailure => "solver-failure",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlowUpReason {
    CapExceeded,
    GrowthCap,
    StepCollapse,
}

/// Everything recorded about the state at the end of one step (step 0 is the initial state).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub l1: f64,
    pub l2: f64,
    pub lm: f64,
    pub linf: f64,
    /// Signed integral `∫u`.
    pub integral: f64,
    /// Largest `|u|` over cells touching the boundary.
    pub boundary_linf: f64,
    pub lin_iters: usize,
    pub res_l1: f64,
    pub res_linf: f64,
    /// Monotonicity limit of the drift at the start of the step.
    pub cfl_dt: f64,
    /// `∫|T_n f(t)|`, the source used by this step.
    pub source_l1: f64,
    /// `|{|u| > 2^j}|` for every recorded level.
    pub superlevel: Vec<f64>,
    /// `∫|u|^m` for each energy exponent.
    pub power_integrals: Vec<f64>,
    /// `m(m−1)/(2α) ∫|E|² |g(u)|² |u|^{m−2}` for each energy exponent.
    pub ineq_rhs: Vec<f64>,
    /// `∫|E|² g(u)²`.
    pub drift_l2sq: f64,
}

/// Per-step norm history of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormSeries {
    pub m: f64,
    pub ineq_ms: Vec<f64>,
    pub levels: Vec<f64>,
    pub dim: usize,
    pub records: Vec<StepRecord>,
}

impl NormSeries {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn column(&self, f: impl Fn(&StepRecord) -> f64) -> Vec<f64> {
        self.records.iter().map(f).collect()
    }

    pub fn last(&self) -> &StepRecord {
        self.records.last().expect("initial record always present")
    }

    pub fn final_time(&self) -> f64 {
        self.last().t
    }

    /// `‖u0‖₁ + Σ Δt_k ∫|f(t_k)|` up to the last recorded step.
    pub fn mass_budget(&self) -> f64 {
        self.records[0].l1 + self.records.iter().skip(1).map(|r| r.dt * r.source_l1).sum::<f64>()
    }

    pub fn total_res_l1(&self) -> f64 {
        self.records.iter().map(|r| r.res_l1).sum()
    }

    pub fn total_res_linf(&self) -> f64 {
        self.records.iter().map(|r| r.res_linf).sum()
    }

    /// Space-time measure of `{|u| > levels[j]}` with right-endpoint weights.
    pub fn spacetime_superlevel(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.levels.len()];
        for r in self.records.iter().skip(1) {
            for (o, s) in out.iter_mut().zip(&r.superlevel) {
                *o += r.dt * s;
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub series: SpaceTimeSeries,
    pub norms: NormSeries,
    pub status: RunStatus,
    pub blowup: Option<BlowUpReason>,
    pub failure: Option<String>,
}

impl Trajectory {
    pub fn final_time(&self) -> f64 {
        self.norms.final_time()
    }
}

/// Result of a single step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub record: StepRecord,
    pub blowup: Option<BlowUpReason>,
}

/// Time-stepping state for one problem.
pub struct Stepper<'p> {
    problem: &'p ProblemSpec,
    config: SolverConfig,
    op: DiffusionOperator,
    vel: FaceVelocities,
    e_sq: Vec<f64>,
    boundary: Vec<usize>,
    levels: Vec<f64>,
    u: Vec<f64>,
    t: f64,
    step: usize,
    initial_linf: f64,
}

impl<'p> Stepper<'p> {
    pub fn new(problem: &'p ProblemSpec, config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        let grid = problem.grid().clone();
        let op = DiffusionOperator::assemble(grid.clone(), problem.diffusivity())?;
        let vel = problem.drift().face_velocities(&grid, 0.0);
        let e_sq = squared_magnitudes(&problem.drift().cell_values(&grid, 0.0));
        let boundary = (0..grid.n_cells()).filter(|&i| grid.is_boundary_cell(i)).collect();
        let u = problem.truncated_u0().into_values();
        let initial_linf = u.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        Ok(Stepper {
            problem,
            config: config.clone(),
            op,
            vel,
            e_sq,
            boundary,
            levels: superlevel_levels(),
            u,
            t: 0.0,
            step: 0,
            initial_linf,
        })
    }

    pub fn problem(&self) -> &ProblemSpec {
        self.problem
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn operator(&self) -> &DiffusionOperator {
        &self.op
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn state(&self) -> &[f64] {
        &self.u
    }

    pub fn field(&self) -> Field {
        Field::new(self.problem.grid().clone(), self.u.clone())
            .unwrap_or_else(|_| Field::blown_up(self.problem.grid().clone(), self.u.clone()))
    }

    pub fn linf(&self) -> f64 {
        self.u.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    fn refresh_drift(&mut self, t: f64) {
        if self.problem.drift().is_time_dependent() {
            let grid = self.problem.grid();
            self.vel = self.problem.drift().face_velocities(grid, t);
            self.e_sq = squared_magnitudes(&self.problem.drift().cell_values(grid, t));
        }
    }

    /// Unscaled monotonicity limit of the drift for the current state.
    pub fn cfl_limit(&self) -> f64 {
        cfl_limit(
            self.problem.grid(),
            &self.vel,
            self.problem.nonlinearity(),
            self.linf(),
            1.0,
            self.config.exec,
        )
    }

    /// Step requested by the policy, before clipping to the horizon.
    pub fn policy_dt(&self) -> f64 {
        match self.config.dt {
            DtPolicy::Fixed { dt } => dt,
            DtPolicy::Adaptive { safety, dt_max } => (safety * self.cfl_limit()).min(dt_max),
        }
    }

    /// Next step, clipped so the run lands exactly on the horizon; `None` once there.
    pub fn proposed_dt(&self) -> Option<f64> {
        let remaining = self.problem.horizon() - self.t;
        if remaining <= 1e-12 * self.problem.horizon() {
            return None;
        }
        let dt = self.policy_dt();
        Some(if dt >= remaining * (1.0 - 1e-9) { remaining } else { dt })
    }

    /// Record describing the current state without advancing.
    pub fn initial_record(&self) -> StepRecord {
        let src = self
            .problem
            .source()
            .cell_values(self.problem.grid(), self.t, self.problem.nonlinearity().reg());
        let source_l1 = src.iter().map(|v| v.abs()).sum::<f64>() * self.problem.grid().cell_volume();
        self.make_record(0.0, SolveStats::default(), self.cfl_limit(), source_l1)
    }

    pub fn advance(&mut self, dt: f64) -> Result<StepOutcome> {
        self.advance_inner(dt, None)
    }

    /// Step with the drift flux evaluated at `frozen` instead of the current
    /// state, so the drift enters as the explicit source `−div(E g_n(v))`.
    /// Stepping with `frozen` equal to the current state reproduces [`Self::advance`].
    pub fn advance_frozen(&mut self, dt: f64, frozen: &[f64]) -> Result<StepOutcome> {
        if frozen.len() != self.u.len() {
            return Err(Error::GridMismatch(format!(
                "frozen state has {} values for {} cells",
                frozen.len(),
                self.u.len()
            )));
        }
        self.advance_inner(dt, Some(frozen))
    }

    fn advance_inner(&mut self, dt: f64, frozen: Option<&[f64]>) -> Result<StepOutcome> {
        if !(dt > 0.0 && dt.is_finite()) {
            return invalid(format!("step size must be positive, got {dt}"));
        }
        let exec = self.config.exec;
        let grid = self.problem.grid().clone();
        let n = grid.n_cells();
        self.refresh_drift(self.t);
        let cfl = self.cfl_limit();

        let nl = *self.problem.nonlinearity();
        let u = &self.u;
        let g = match frozen {
            None => exec.collect(n, |i| nl.eval(u[i])),
            Some(v) => exec.collect(n, |i| nl.eval(v[i])),
        };
        let mut div = vec![0.0; n];
        divergence_into(&grid, &self.vel, &g, &mut div, exec);

        let t_next = self.t + dt;
        let src = self.problem.source().cell_values(&grid, t_next, nl.reg());
        let source_l1 = src.iter().map(|v| v.abs()).sum::<f64>() * grid.cell_volume();
        let rhs = exec.collect(n, |i| u[i] + dt * (src[i] - div[i]));

        let mut next = rhs.clone();
        let stats = self
            .op
            .solve_shifted(dt, &rhs, &mut next, self.config.lin_tol, self.config.max_lin_iters, exec)
            .map_err(|s| Error::LinearSolve {
                step: self.step + 1,
                iterations: s.iterations,
                residual: s.rel_residual,
            })?;

        self.u = next;
        self.t = t_next;
        self.step += 1;
        self.refresh_drift(self.t);

        let linf = self.linf();
        let blowup = if !linf.is_finite() || linf > self.config.cap_linf {
            Some(BlowUpReason::CapExceeded)
        } else if self.config.growth_cap.is_some_and(|c| linf > c * self.initial_linf) {
            Some(BlowUpReason::GrowthCap)
        } else {
            None
        };
        let record = self.make_record(dt, stats, cfl, source_l1);
        Ok(StepOutcome { record, blowup })
    }

    fn make_record(&self, dt: f64, stats: SolveStats, cfl: f64, source_l1: f64) -> StepRecord {
        let exec = self.config.exec;
        let grid = self.problem.grid();
        let vol = grid.cell_volume();
        let u = &self.u;
        let n = u.len();
        let nl = self.problem.nonlinearity();
        let m = self.config.norm_m;
        let finite = u.iter().all(|v| v.is_finite());
        let linf = self.linf();

        let l1 = exec.sum(n, |i| u[i].abs()) * vol;
        let l2 = (exec.sum(n, |i| u[i] * u[i]) * vol).sqrt();
        let lm = (exec.sum(n, |i| abs_pow(u[i], m)) * vol).powf(1.0 / m);
        let integral = exec.sum(n, |i| u[i]) * vol;
        let boundary_linf = self.boundary.iter().fold(0.0, |a: f64, &i| a.max(u[i].abs()));

        let mut superlevel = vec![0.0; self.levels.len()];
        if finite {
            // bin[k] counts cells whose |u| exceeds exactly the first k+1 levels
            let mut bins = vec![0usize; self.levels.len()];
            for &v in u {
                let a = v.abs();
                if a > self.levels[0] {
                    let k = self.levels.partition_point(|&l| l < a) - 1;
                    bins[k] += 1;
                }
            }
            let mut acc = 0usize;
            for k in (0..bins.len()).rev() {
                acc += bins[k];
                superlevel[k] = acc as f64 * vol;
            }
        }

        let alpha = self.problem.alpha();
        let e_sq = &self.e_sq;
        let power_integrals = self
            .config
            .ineq_ms
            .iter()
            .map(|&mm| exec.sum(n, |i| abs_pow(u[i], mm)) * vol)
            .collect();
        let ineq_rhs = self
            .config
            .ineq_ms
            .iter()
            .map(|&mm| {
                if e_sq.iter().all(|&e| e == 0.0) {
                    0.0
                } else {
                    mm * (mm - 1.0) / (2.0 * alpha) * exec.sum(n, |i| e_sq[i] * nl.energy_integrand(u[i], mm)) * vol
                }
            })
            .collect();
        let drift_l2sq = exec.sum(n, |i| {
            let g = nl.eval(u[i]);
            e_sq[i] * g * g
        }) * vol;

        StepRecord {
            step: self.step,
            t: self.t,
            dt,
            l1,
            l2,
            lm,
            linf,
            integral,
            boundary_linf,
            lin_iters: stats.iterations,
            res_l1: stats.res_l1,
            res_linf: stats.res_linf,
            cfl_dt: cfl,
            source_l1,
            superlevel,
            power_integrals,
            ineq_rhs,
            drift_l2sq,
        }
    }

    pub(crate) fn empty_norms(&self) -> NormSeries {
        NormSeries {
            m: self.config.norm_m,
            ineq_ms: self.config.ineq_ms.clone(),
            levels: self.levels.clone(),
            dim: self.problem.grid().dim(),
            records: vec![self.initial_record()],
        }
    }
}

fn squared_magnitudes(e: &[[f64; MAX_DIM]]) -> Vec<f64> {
    e.iter().map(|v| v.iter().map(|c| c * c).sum()).collect()
}

/// Why a run ended before its horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct Stop {
    pub status: RunStatus,
    pub blowup: Option<BlowUpReason>,
    pub failure: Option<String>,
}

impl Stop {
    fn blowup(reason: BlowUpReason) -> Self {
        Stop {
            status: RunStatus::BlowUpSuspected,
            blowup: Some(reason),
            failure: None,
        }
    }

    fn failure(msg: String) -> Self {
        Stop {
            status: RunStatus::SolverFailure,
            blowup: None,
            failure: Some(msg),
        }
    }
}

impl Stepper<'_> {
    /// Reason to stop before taking another step: adaptive step collapse or
    /// an exhausted step budget.
    pub fn pre_step_stop(&self) -> Option<Stop> {
        let adaptive = matches!(self.config.dt, DtPolicy::Adaptive { .. });
        if adaptive && self.policy_dt() < self.config.dt_min {
            return Some(Stop::blowup(BlowUpReason::StepCollapse));
        }
        if self.step >= self.config.max_steps {
            return Some(Stop::failure(format!(
                "step budget of {} exhausted at t = {}",
                self.config.max_steps, self.t
            )));
        }
        None
    }
}

/// Accumulates snapshots and per-step records for one stepper.
pub struct Recorder {
    series: SpaceTimeSeries,
    norms: NormSeries,
    stride: usize,
    last_kept: usize,
    stop: Option<Stop>,
}

impl Recorder {
    pub fn new(stepper: &Stepper) -> Self {
        Recorder {
            series: SpaceTimeSeries::new(stepper.field()),
            norms: stepper.empty_norms(),
            stride: stepper.config.snapshot_stride,
            last_kept: 0,
            stop: None,
        }
    }

    pub fn stopped(&self) -> bool {
        self.stop.is_some()
    }

    pub fn stop(&mut self, stop: Stop) {
        self.stop.get_or_insert(stop);
    }

    /// Record the result of `stepper.advance*`. Linear-solver failures end
    /// the run; other errors propagate.
    pub fn record(&mut self, stepper: &Stepper, outcome: Result<StepOutcome>) -> Result<()> {
        match outcome {
            Ok(out) => {
                let k = out.record.step;
                self.norms.records.push(out.record);
                if let Some(reason) = out.blowup {
                    let snap = if reason == BlowUpReason::CapExceeded {
                        Field::blown_up(stepper.problem.grid().clone(), stepper.state().to_vec())
                    } else {
                        stepper.field()
                    };
                    self.series.push(stepper.time(), snap)?;
                    self.last_kept = k;
                    self.stop(Stop::blowup(reason));
                } else if k % self.stride == 0 {
                    self.series.push(stepper.time(), stepper.field())?;
                    self.last_kept = k;
                }
                Ok(())
            }
            Err(e @ Error::LinearSolve { .. }) => {
                self.stop(Stop::failure(e.to_string()));
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    /// Close the trajectory, keeping the final state.
    pub fn finish(mut self, stepper: &Stepper) -> Result<Trajectory> {
        if self.last_kept != stepper.step_index() {
            self.series.push(stepper.time(), stepper.field())?;
        }
        let stop = self.stop.unwrap_or(Stop {
            status: RunStatus::Completed,
            blowup: None,
            failure: None,
        });
        Ok(Trajectory {
            series: self.series,
            norms: self.norms,
            status: stop.status,
            blowup: stop.blowup,
            failure: stop.failure,
        })
    }
}

/// Integrate `problem` from 0 to its horizon or until blow-up is suspected.
pub fn run(problem: &ProblemSpec, config: &SolverConfig) -> Result<Trajectory> {
    let mut stepper = Stepper::new(problem, config)?;
    let mut rec = Recorder::new(&stepper);
    while let Some(dt) = stepper.proposed_dt() {
        if let Some(stop) = stepper.pre_step_stop() {
            rec.stop(stop);
            break;
        }
        let out = stepper.advance(dt);
        rec.record(&stepper, out)?;
        if rec.stopped() {
            break;
        }
    }
    rec.finish(&stepper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use crate::model::{make_problem, CoefficientSet, Diffusivity, DriftField, Nonlinearity, Preset, PresetOptions, SourceField};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn heat_1d(n: usize, u0: impl Fn(f64) -> f64, source: SourceField, horizon: f64) -> ProblemSpec {
        let g = Arc::new(Grid::unit(1, n).unwrap());
        let u0 = Field::from_fn(g.clone(), |x| u0(x[0])).unwrap();
        let coeffs = CoefficientSet {
            diffusivity: Diffusivity::identity(&g),
            drift: DriftField::Zero,
            source,
            u0,
        };
        ProblemSpec::new(g, coeffs, Nonlinearity::power(0.0, None).unwrap(), horizon, 1.0, 1.0).unwrap()
    }

    #[test]
    fn zero_state_stays_zero() {
        let p = heat_1d(8, |_| 0.0, SourceField::Zero, 0.1);
        let mut st = Stepper::new(&p, &SolverConfig::default()).unwrap();
        st.advance(0.01).unwrap();
        assert!(st.state().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eigenmode_decays_exactly() {
        let n = 32;
        let pi = std::f64::consts::PI;
        let p = heat_1d(n, |x| (pi * x).sin(), SourceField::Zero, 0.05);
        let dt = 1e-3;
        let cfg = SolverConfig {
            dt: DtPolicy::Fixed { dt },
            ..Default::default()
        };
        let traj = run(&p, &cfg).unwrap();
        assert_eq!(traj.status, RunStatus::Completed);
        let h = 1.0 / n as f64;
        let lambda = 4.0 / (h * h) * (pi * h / 2.0).sin().powi(2);
        let steps = traj.norms.records.len() - 1;
        assert_eq!(steps, 50);
        let factor = (1.0 + dt * lambda).powi(-(steps as i32));
        let u0 = p.u0().values();
        for (a, b) in traj.series.last().values().iter().zip(u0) {
            assert_relative_eq!(*a, b * factor, max_relative = 1e-10);
        }
    }

    #[test]
    fn constant_source_is_positive_after_one_step() {
        let p = heat_1d(10, |_| 0.0, SourceField::Constant(2.0), 1.0);
        let mut st = Stepper::new(&p, &SolverConfig::default()).unwrap();
        st.advance(0.1).unwrap();
        assert!(st.state().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn heat_run_loses_mass_monotonically() {
        let g = Arc::new(Grid::unit(2, 24).unwrap());
        let p = make_problem(
            Preset::Heat,
            g,
            PresetOptions {
                horizon: 0.1,
                ..Default::default()
            },
        )
        .unwrap();
        let traj = run(&p, &SolverConfig::default()).unwrap();
        assert_eq!(traj.status, RunStatus::Completed);
        assert_relative_eq!(traj.final_time(), 0.1, max_relative = 1e-12);
        let l1 = traj.norms.column(|r| r.l1);
        assert!(l1.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn kq_small_mass_decays_and_large_mass_concentrates() {
        let g = Arc::new(Grid::new(3, &[6.0; 3], &[12; 3]).unwrap());
        let opts = |mass| PresetOptions {
            mass,
            width: Some(1.0),
            horizon: 1.0,
            ..Default::default()
        };
        let cfg = SolverConfig {
            growth_cap: Some(1.5),
            ..Default::default()
        };
        let small = run(&make_problem(Preset::Kq, g.clone(), opts(0.01)).unwrap(), &cfg).unwrap();
        assert_eq!(small.status, RunStatus::Completed);
        let linf = small.norms.column(|r| r.linf);
        assert!(linf.last().unwrap() < &linf[0]);
        let big = run(&make_problem(Preset::Kq, g, opts(50.0)).unwrap(), &cfg).unwrap();
        assert_eq!(big.status, RunStatus::BlowUpSuspected);
        assert_eq!(big.blowup, Some(BlowUpReason::GrowthCap));
        assert!(big.final_time() < 1.0);
    }

    #[test]
    fn cap_exceedance_flags_last_snapshot() {
        let g = Arc::new(Grid::unit(1, 10).unwrap());
        let p = make_problem(
            Preset::Heat,
            g,
            PresetOptions {
                mass: 10.0,
                ..Default::default()
            },
        )
        .unwrap();
        let cfg = SolverConfig {
            cap_linf: 1e-3,
            ..Default::default()
        };
        let t = run(&p, &cfg).unwrap();
        assert_eq!(t.status, RunStatus::BlowUpSuspected);
        assert_eq!(t.blowup, Some(BlowUpReason::CapExceeded));
        assert!(t.series.last().is_blown_up());
    }

    #[test]
    fn solver_failure_is_reported() {
        let g = Arc::new(Grid::unit(1, 50).unwrap());
        let p = make_problem(Preset::Heat, g, PresetOptions::default()).unwrap();
        let cfg = SolverConfig {
            max_lin_iters: 1,
            ..Default::default()
        };
        let t = run(&p, &cfg).unwrap();
        assert_eq!(t.status, RunStatus::SolverFailure);
        assert!(t.failure.unwrap().contains("step 1"));
    }

    #[test]
    fn config_validation() {
        let bad = [
            SolverConfig {
                lin_tol: 1e-3,
                ..Default::default()
            },
            SolverConfig {
                dt: DtPolicy::Adaptive { safety: 1.5, dt_max: 1.0 },
                ..Default::default()
            },
            SolverConfig {
                cap_linf: 0.0,
                ..Default::default()
            },
            SolverConfig {
                dt: DtPolicy::Fixed { dt: 0.0 },
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
        assert!(SolverConfig::default().validate().is_ok());
    }

    #[test]
    fn superlevel_record_matches_direct_count() {
        let g = Arc::new(Grid::unit(2, 16).unwrap());
        let p = make_problem(
            Preset::PowerDrift,
            g,
            PresetOptions {
                mass: 3.0,
                theta: Some(0.5),
                horizon: 0.05,
                ..Default::default()
            },
        )
        .unwrap();
        let traj = run(&p, &SolverConfig::default()).unwrap();
        let last = traj.norms.last();
        let f = traj.series.last();
        for (j, &lev) in traj.norms.levels.iter().enumerate() {
            assert_eq!(last.superlevel[j], f.superlevel_measure(lev).unwrap());
        }
    }

    #[test]
    fn sequential_and_parallel_runs_agree_bitwise() {
        let g = Arc::new(Grid::new(3, &[10.0; 3], &[16; 3]).unwrap());
        let p = make_problem(
            Preset::Kq,
            g,
            PresetOptions {
                mass: 5.0,
                horizon: 0.2,
                ..Default::default()
            },
        )
        .unwrap();
        let a = run(
            &p,
            &SolverConfig {
                exec: Exec::Sequential,
                ..Default::default()
            },
        )
        .unwrap();
        let b = run(
            &p,
            &SolverConfig {
                exec: Exec::Parallel,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(a.norms, b.norms);
        assert_eq!(a.series.last().values(), b.series.last().values());
    }
}
