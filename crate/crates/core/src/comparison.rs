//! Paired runs and the discrete L¹ comparison inequality
//!
//! `∫(v(τ) − w(τ))₊ ≤ ∫(v0 − w0)₊ + ∫₀^τ ∫(f − g) χ_{v>w}`.
//!
//! Both runs advance in lockstep so every snapshot is taken at the same
//! time. The source integral uses step-end values of `f − g` and of the
//! indicator, matching the implicit half of the scheme.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Grid;
use crate::model::ProblemSpec;
use crate::solver::{Recorder, RunStatus, SolverConfig, Stepper, Stop, Trajectory};

/// Relative part of the contraction tolerance.
pub const CONTRACTION_REL_TOL: f64 = 1e-8;

fn mismatch(what: &str) -> Error {
    Error::GridMismatch(format!("paired problems differ in {what}"))
}

/// Reject pairs that differ in anything except source and initial datum.
pub fn check_compatible(v: &ProblemSpec, w: &ProblemSpec) -> Result<()> {
    let grid: &Grid = v.grid();
    if grid != w.grid().as_ref() {
        return Err(mismatch("grid"));
    }
    if v.diffusivity() != w.diffusivity() {
        return Err(mismatch("diffusivity"));
    }
    if v.nonlinearity() != w.nonlinearity() {
        return Err(mismatch("nonlinearity"));
    }
    if v.horizon() != w.horizon() {
        return Err(mismatch("horizon"));
    }
    let (dv, dw) = (v.drift(), w.drift());
    if dv.is_time_dependent() != dw.is_time_dependent() {
        return Err(mismatch("drift"));
    }
    // drift fields are compared through their face velocities at a few times
    let samples: &[f64] = if dv.is_time_dependent() {
        &[0.0, 0.25, 0.5, 0.75, 1.0]
    } else {
        &[0.0]
    };
    for &s in samples {
        let t = s * v.horizon();
        if dv.face_velocities(grid, t) != dw.face_velocities(grid, t) {
            return Err(mismatch("drift"));
        }
    }
    Ok(())
}

/// Advance both problems with the same step sequence (the smaller of the two
/// proposed steps) and every state kept. If one run stops early, the other
/// stops with it so the time grids stay identical.
pub fn paired_run(v: &ProblemSpec, w: &ProblemSpec, config: &SolverConfig) -> Result<(Trajectory, Trajectory)> {
    check_compatible(v, w)?;
    let config = SolverConfig {
        snapshot_stride: 1,
        ..config.clone()
    };
    let mut sv = Stepper::new(v, &config)?;
    let mut sw = Stepper::new(w, &config)?;
    let mut rv = Recorder::new(&sv);
    let mut rw = Recorder::new(&sw);
    while let (Some(dv), Some(dw)) = (sv.proposed_dt(), sw.proposed_dt()) {
        let stop = sv.pre_step_stop().or_else(|| sw.pre_step_stop());
        if let Some(stop) = stop {
            rv.stop(stop.clone());
            rw.stop(stop);
            break;
        }
        let dt = dv.min(dw);
        let ov = sv.advance(dt);
        rv.record(&sv, ov)?;
        let ow = sw.advance(dt);
        rw.record(&sw, ow)?;
        if rv.stopped() || rw.stopped() {
            let partner = Stop {
                status: RunStatus::Completed,
                blowup: None,
                failure: Some("stopped early together with its partner run".into()),
            };
            rv.stop(partner.clone());
            rw.stop(partner);
            break;
        }
    }
    Ok((rv.finish(&sv)?, rw.finish(&sw)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderCheck {
    /// `min (v − w)` over all cells and times.
    pub min_difference: f64,
    pub tolerance: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedRunReport {
    pub times: Vec<f64>,
    /// `∫(v(τ) − w(τ))₊`.
    pub lhs: Vec<f64>,
    /// `∫(v0 − w0)₊ + Σ Δt ∫(f − g) χ_{v>w}`.
    pub rhs: Vec<f64>,
    /// `lhs − rhs`.
    pub gap: Vec<f64>,
    pub max_gap: f64,
    /// `1e−8 (‖v0‖₁ + ‖w0‖₁)` plus the accumulated linear residuals of both runs.
    pub budget: f64,
    /// `max_gap ≤ budget`.
    pub contraction_ok: bool,
    /// Present when `v0 ≥ w0` and `f ≥ g` cell-wise, so `v ≥ w` must hold throughout.
    pub order: Option<OrderCheck>,
}

pub fn contraction_gap(tv: &Trajectory, tw: &Trajectory, v: &ProblemSpec, w: &ProblemSpec) -> Result<PairedRunReport> {
    check_compatible(v, w)?;
    let times = tv.series.times();
    if times.len() != tw.series.times().len() || times.iter().zip(tw.series.times()).any(|(a, b)| a != b) {
        return Err(Error::GridMismatch("trajectories are not on the same time grid".into()));
    }
    if tv.norms.records.len() != times.len() || tw.norms.records.len() != times.len() {
        return Err(Error::GridMismatch("trajectories must keep every step".into()));
    }
    let grid = v.grid();
    let vol = grid.cell_volume();
    let reg = v.nonlinearity().reg();
    let (snaps_v, snaps_w) = (tv.series.snapshots(), tw.series.snapshots());
    for s in snaps_v.iter().chain(snaps_w) {
        s.usable()?;
    }

    let pos_part = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y).max(0.0)).sum::<f64>() * vol };
    let v0 = snaps_v[0].values();
    let w0 = snaps_w[0].values();
    let initial = pos_part(v0, w0);

    let mut lhs = Vec::with_capacity(times.len());
    let mut rhs = Vec::with_capacity(times.len());
    let mut acc = initial;
    let mut sources_ordered = true;
    for k in 0..times.len() {
        let (a, b) = (snaps_v[k].values(), snaps_w[k].values());
        if k > 0 {
            let dt = times[k] - times[k - 1];
            let f = v.source().cell_values(grid, times[k], reg);
            let g = w.source().cell_values(grid, times[k], reg);
            sources_ordered &= f.iter().zip(&g).all(|(x, y)| x >= y);
            let term: f64 = (0..a.len()).filter(|&i| a[i] > b[i]).map(|i| f[i] - g[i]).sum::<f64>() * vol;
            acc += dt * term;
        }
        lhs.push(pos_part(a, b));
        rhs.push(acc);
    }
    let gap: Vec<f64> = lhs.iter().zip(&rhs).map(|(l, r)| l - r).collect();
    let max_gap = gap.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let l1 = |u: &[f64]| u.iter().map(|x| x.abs()).sum::<f64>() * vol;
    let budget = CONTRACTION_REL_TOL * (l1(v0) + l1(w0)) + tv.norms.total_res_l1() + tw.norms.total_res_l1();

    let data_ordered = v0.iter().zip(w0).all(|(x, y)| x >= y);
    let order = (data_ordered && sources_ordered).then(|| {
        let mut min_difference = f64::INFINITY;
        let mut max_abs: f64 = 0.0;
        for (sv, sw) in snaps_v.iter().zip(snaps_w) {
            for (x, y) in sv.values().iter().zip(sw.values()) {
                min_difference = min_difference.min(x - y);
                max_abs = max_abs.max(x.abs()).max(y.abs());
            }
        }
        let tolerance = tv.norms.total_res_linf() + tw.norms.total_res_linf() + 1e-12 * max_abs;
        OrderCheck {
            min_difference,
            tolerance,
            ok: min_difference >= -tolerance,
        }
    });

    Ok(PairedRunReport {
        times: times.to_vec(),
        lhs,
        rhs,
        gap,
        max_gap,
        budget,
        contraction_ok: max_gap <= budget,
        order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Field;
    use crate::model::{make_problem, DriftField, Preset, PresetOptions, SourceField};
    use std::sync::Arc;

    fn base(mass: f64, source: Option<SourceField>) -> ProblemSpec {
        let g = Arc::new(Grid::unit(2, 16).unwrap());
        make_problem(
            Preset::PowerDrift,
            g,
            PresetOptions {
                theta: Some(0.5),
                mass,
                width: Some(0.12),
                horizon: 0.05,
                drift: Some(DriftField::Uniform([1.0, -0.5, 0.0])),
                source,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn identical_problems_give_identical_runs_and_no_gap() {
        let p = base(1.0, None);
        let (a, b) = paired_run(&p, &p, &SolverConfig::default()).unwrap();
        assert_eq!(a.series.times(), b.series.times());
        for (x, y) in a.series.snapshots().iter().zip(b.series.snapshots()) {
            assert_eq!(x.values(), y.values());
        }
        let rep = contraction_gap(&a, &b, &p, &p).unwrap();
        assert!(rep.gap.iter().all(|&g| g <= 0.0));
        assert!(rep.contraction_ok);
    }

    #[test]
    fn larger_datum_stays_above() {
        let w = base(1.0, None);
        let bump = Field::from_fn(w.grid().clone(), |x| {
            0.5 * (-((x[0] - 0.3).powi(2) + (x[1] - 0.6).powi(2)) / 0.01).exp()
        })
        .unwrap();
        let v0 = w.u0().zip_map(&bump, |a, b| a + b).unwrap();
        let v = w.clone().with_u0(v0).unwrap();
        let (tv, tw) = paired_run(&v, &w, &SolverConfig::default()).unwrap();
        assert_eq!(tv.status, RunStatus::Completed);
        let rep = contraction_gap(&tv, &tw, &v, &w).unwrap();
        assert!(rep.contraction_ok, "max gap {} budget {}", rep.max_gap, rep.budget);
        let order = rep.order.unwrap();
        assert!(order.ok, "{order:?}");
        assert!(rep.lhs.windows(2).all(|p| p[1] <= p[0] + rep.budget));
    }

    #[test]
    fn source_difference_enters_with_its_sign() {
        let v = base(1.0, Some(SourceField::Constant(0.0)));
        let w = base(1.0, Some(SourceField::Constant(1.0)));
        let (tv, tw) = paired_run(&v, &w, &SolverConfig::default()).unwrap();
        let rep = contraction_gap(&tv, &tw, &v, &w).unwrap();
        // v ≤ w throughout, so (v − w)₊ vanishes and so does the source term
        assert!(rep.lhs.iter().all(|&l| l <= rep.budget));
        assert!(rep.contraction_ok);
        assert!(rep.order.is_none());
        // swapping makes the source term positive and the gap strictly negative
        let (sw, sv) = paired_run(&w, &v, &SolverConfig::default()).unwrap();
        let rep = contraction_gap(&sw, &sv, &w, &v).unwrap();
        assert!(rep.rhs.last().unwrap() > &0.0);
        assert!(rep.contraction_ok);
        assert!(rep.order.unwrap().ok);
    }

    #[test]
    fn different_drifts_are_rejected() {
        let v = base(1.0, None);
        let w = make_problem(
            Preset::PowerDrift,
            v.grid().clone(),
            PresetOptions {
                theta: Some(0.5),
                horizon: 0.05,
                drift: Some(DriftField::Uniform([0.0, 1.0, 0.0])),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(matches!(paired_run(&v, &w, &SolverConfig::default()), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn misaligned_trajectories_are_rejected() {
        let p = base(1.0, None);
        let a = crate::solver::run(&p, &SolverConfig::default()).unwrap();
        let b = crate::solver::run(
            &p,
            &SolverConfig {
                dt: crate::solver::DtPolicy::Fixed { dt: 1e-3 },
                ..Default::default()
            },
        )
        .unwrap();
        assert!(contraction_gap(&a, &b, &p, &p).is_err());
    }
}
