use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use rayon::prelude::*;
use serde_json::{json, Value};
use superdrift::comparison::{contraction_gap, paired_run};
use superdrift::estimates::{
    blowup_time, classify_regime, gamma, q_star, q_star_star, rational_to_f64, run_diagnostics, sigma, slicing_plan, smallness_check,
    ExponentTable, RegimeQuery,
};
use superdrift::fixedpoint::{data_norms, data_smallness, default_q, picard_iterate, uniform_time_grid, BallParams, PicardOptions};
use superdrift::io::{
    load_trajectory, save_trajectory, write_atomic, write_diagnostics_csv, write_gap_csv, write_json_atomic, SnapshotFormat,
};
use superdrift::solver::{RunStatus, Trajectory};

use crate::args::{
    parse_r, ConstantsArgs, ContractionArgs, DiagnoseArgs, FixedpointArgs, ProblemArgs, RegimeArgs, Resolved, RunArgs, SweepArgs,
};
use crate::manifest::RunManifest;
use crate::Verdict;

/// A closed stdout (`| head`) is not an error; the outputs are already on disk.
fn print_json(v: &Value) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn linf_max(traj: &Trajectory) -> f64 {
    traj.norms.records.iter().map(|r| r.linf).fold(0.0, f64::max)
}

fn summary(traj: &Trajectory) -> Value {
    json!({
        "status": traj.status.to_string(),
        "blowup": traj.blowup,
        "failure": traj.failure,
        "final_time": traj.final_time(),
        "steps": traj.norms.records.len() - 1,
        "linf_initial": traj.norms.records[0].linf,
        "linf_max": linf_max(traj),
    })
}

fn status_verdict(status: RunStatus, fail_on_blowup: bool) -> Verdict {
    match status {
        RunStatus::SolverFailure => Verdict::SolverFailure,
        RunStatus::BlowUpSuspected if fail_on_blowup => Verdict::SolverFailure,
        _ => Verdict::Ok,
    }
}

/// Integrate, store, and optionally diagnose one resolved configuration.
fn run_one(resolved: &Resolved, out: &Path, format: SnapshotFormat, diagnose: bool) -> anyhow::Result<(Trajectory, Option<bool>)> {
    let started = Instant::now();
    let cfg = &resolved.config;
    let problem = cfg.problem(&resolved.base)?;
    let solver = cfg.solver_config()?;
    let traj = superdrift::run(&problem, &solver)?;
    let mut outputs = save_trajectory(out, &traj, format)?;
    let mut checks = None;
    if diagnose {
        let report = run_diagnostics(&traj, &problem, &cfg.constants, cfg.mu)?;
        outputs.extend(write_diagnostics(out, &report)?);
        checks = Some(report.all_ok);
    }
    RunManifest::new(resolved, traj.status.to_string(), &outputs, started).write(out)?;
    Ok((traj, checks))
}

fn write_diagnostics(dir: &Path, report: &superdrift::estimates::DiagnosticsReport) -> anyhow::Result<Vec<PathBuf>> {
    let json_path = dir.join("diagnostics.json");
    write_json_atomic(&json_path, report)?;
    let csv_path = dir.join("diagnostics.csv");
    write_atomic(&csv_path, |w| write_diagnostics_csv(w, report))?;
    Ok(vec![json_path, csv_path])
}

pub fn run(a: RunArgs) -> anyhow::Result<Verdict> {
    let resolved = a.problem.resolve()?;
    let out = &a.output.out;
    let (traj, checks) = run_one(&resolved, out, a.snapshot_format, a.diagnose)?;
    let mut report = summary(&traj);
    report["out"] = json!(out);
    report["config_hash"] = json!(resolved.hash);
    report["checks_ok"] = json!(checks);
    print_json(&report)?;
    let verdict = status_verdict(traj.status, a.fail_on_blowup);
    Ok(if verdict == Verdict::Ok && checks == Some(false) {
        Verdict::ChecksFailed
    } else {
        verdict
    })
}

pub fn sweep(a: SweepArgs) -> anyhow::Result<Verdict> {
    let masses: Vec<Option<f64>> = if a.masses.is_empty() {
        vec![None]
    } else {
        a.masses.iter().copied().map(Some).collect()
    };
    let thetas: Vec<Option<f64>> = if a.thetas.is_empty() {
        vec![None]
    } else {
        a.thetas.iter().copied().map(Some).collect()
    };
    let regs: Vec<Option<String>> = if a.reg_ns.is_empty() {
        vec![None]
    } else {
        a.reg_ns.iter().cloned().map(Some).collect()
    };

    let mut jobs = Vec::new();
    for m in &masses {
        for t in &thetas {
            for r in &regs {
                let overrides = ProblemArgs {
                    mass: *m,
                    theta: *t,
                    reg_n: r.clone(),
                    ..Default::default()
                };
                let resolved = a.problem.resolve_with(Some(overrides.layer()))?;
                jobs.push(resolved);
            }
        }
    }
    fs::create_dir_all(&a.output.out)?;
    let results: Vec<anyhow::Result<Trajectory>> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, job)| run_one(job, &a.output.out.join(format!("run_{i:03}")), a.snapshot_format, false).map(|(t, _)| t))
        .collect();

    let mut rows = Vec::new();
    let mut verdict = Verdict::Ok;
    for (i, (job, res)) in jobs.iter().zip(results).enumerate() {
        let traj = res.with_context(|| format!("sweep run {i}"))?;
        if status_verdict(traj.status, a.fail_on_blowup) != Verdict::Ok {
            verdict = Verdict::SolverFailure;
        }
        let c = &job.config;
        let reg = c.reg_n.level()?.map_or("inf".to_string(), |n| format!("{n:?}"));
        rows.push(vec![
            i.to_string(),
            format!("{:?}", c.mass),
            c.theta.map(|t| format!("{t:?}")).unwrap_or_default(),
            reg,
            traj.status.to_string(),
            format!("{:?}", traj.final_time()),
            format!("{:?}", traj.norms.records[0].linf),
            format!("{:?}", linf_max(&traj)),
            job.hash.clone(),
        ]);
    }
    let path = a.output.out.join("sweep.csv");
    write_atomic(&path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "run",
            "mass",
            "theta",
            "reg_n",
            "status",
            "final_time",
            "linf_initial",
            "linf_max",
            "config_hash",
        ])?;
        for r in &rows {
            out.write_record(r)?;
        }
        out.flush()?;
        Ok(())
    })?;
    print_json(&json!({ "runs": rows.len(), "summary": path }))?;
    Ok(verdict)
}

pub fn regime(a: RegimeArgs) -> anyhow::Result<Verdict> {
    let query = RegimeQuery::parse(a.dim, &a.theta, &a.r, &a.mu, a.q.as_deref())?;
    let report = classify_regime(&query)?;
    let q = query.q.as_ref().map(rational_to_f64).unwrap_or_else(|| default_q(a.dim));
    let theta = rational_to_f64(&query.theta);
    let mu = rational_to_f64(&query.mu);
    let (b, t_star) = match blowup_time(mu, query.r.to_f64(), a.dim, theta, a.c_mu, a.u0_norm) {
        Ok(bt) => (json!(bt.b), json!(bt.t_star)),
        Err(_) => (Value::Null, Value::Null),
    };
    let mut v = serde_json::to_value(&report)?;
    v["exponents"] = json!({
        "q": q,
        "q_star": q_star(a.dim, q),
        "q_star_star": q_star_star(a.dim, q),
        "gamma": gamma(a.dim, q),
        "sigma": sigma(a.dim),
        "b": b,
        "T_star": t_star,
    });
    print_json(&v)?;
    Ok(Verdict::Ok)
}

pub fn diagnose(a: DiagnoseArgs) -> anyhow::Result<Verdict> {
    let manifest = RunManifest::read(&a.dir).with_context(|| format!("reading manifest in {}", a.dir.display()))?;
    let cfg = manifest.config;
    let problem = cfg.problem(&manifest.config_base)?;
    let traj = load_trajectory(&a.dir, problem.grid().clone())?;
    let report = run_diagnostics(&traj, &problem, &cfg.constants, a.mu.unwrap_or(cfg.mu))?;
    write_diagnostics(&a.dir, &report)?;
    print_json(&json!({
        "all_ok": report.all_ok,
        "mass_ok": report.mass.ok,
        "superlevel_ok": report.superlevel.ok,
        "diff_ineq_ok": report.diff_ineq.iter().all(|c| c.check.ok),
        "gn_ok": report.gn.ok,
        "decay_fit": report.decay_fit,
    }))?;
    Ok(if report.all_ok { Verdict::Ok } else { Verdict::ChecksFailed })
}

pub fn contraction_test(a: ContractionArgs) -> anyhow::Result<Verdict> {
    let started = Instant::now();
    let v = a.problem.resolve()?;
    let w_mass = a.w_mass.unwrap_or(0.5 * v.config.mass);
    let w_layer = ProblemArgs {
        mass: Some(w_mass),
        source_form: a.w_source_form.clone(),
        u0_form: a.w_u0_form.clone(),
        ..Default::default()
    }
    .layer();
    let w = a.problem.resolve_with(Some(w_layer))?;
    let pv = v.config.problem(&v.base)?;
    let pw = w.config.problem(&w.base)?;
    let solver = v.config.solver_config()?;
    let (tv, tw) = paired_run(&pv, &pw, &solver)?;
    let report = contraction_gap(&tv, &tw, &pv, &pw)?;

    let out = &a.output.out;
    fs::create_dir_all(out)?;
    let gap = out.join("gap.csv");
    write_atomic(&gap, |wr| write_gap_csv(wr, &report))?;
    let order_ok = report.order.as_ref().is_none_or(|o| o.ok);
    let pass = report.contraction_ok && order_ok;
    let verdict = json!({
        "pass": pass,
        "contraction_ok": report.contraction_ok,
        "max_gap": report.max_gap,
        "budget": report.budget,
        "order": report.order,
        "status_v": tv.status.to_string(),
        "status_w": tw.status.to_string(),
        "w_config_hash": w.hash,
    });
    let verdict_path = out.join("verdict.json");
    write_json_atomic(&verdict_path, &verdict)?;
    RunManifest::new(&v, if pass { "pass" } else { "fail" }, &[gap, verdict_path], started).write(out)?;
    print_json(&verdict)?;
    Ok(if pass { Verdict::Ok } else { Verdict::ChecksFailed })
}

pub fn fixedpoint(a: FixedpointArgs) -> anyhow::Result<Verdict> {
    let started = Instant::now();
    let resolved = a.problem.resolve()?;
    let problem = resolved.config.problem(&resolved.base)?;
    let solver = resolved.config.solver_config()?;
    let opts = PicardOptions {
        tol: a.tol,
        max_iter: a.max_iter,
        q: a.q,
    };
    let (_, report) = picard_iterate(&problem, &solver, &opts)?;
    let q = a.q.unwrap_or_else(|| default_q(problem.grid().dim()));
    let r = parse_r(&a.r)?;
    let times = uniform_time_grid(problem.horizon(), report.dt)?;
    let norms = data_norms(&problem, &times, q, r)?;
    let theta = problem.nonlinearity().theta();
    let smallness = data_smallness(&norms, theta, a.c).ok();
    let ball = BallParams::new(a.c * norms.drift, a.c * (norms.source + norms.datum), theta).ok();

    let out = &a.output.out;
    fs::create_dir_all(out)?;
    let csv_path = out.join("picard.csv");
    write_atomic(&csv_path, |w| report.write_csv(w))?;
    let verdict = json!({
        "converged": report.converged,
        "iterations": report.iterations,
        "final_norm": report.final_norm(),
        "diverged": report.diverged,
        "note": report.note,
        "exponent": report.exponent,
        "dt": report.dt,
        "smallness": smallness.map(|s| json!({ "lhs": s.lhs, "threshold": s.threshold, "satisfied": s.satisfied })),
        "data_norms": norms,
        "ball": ball,
    });
    let json_path = out.join("fixedpoint.json");
    write_json_atomic(&json_path, &verdict)?;
    let status = if report.converged { "converged" } else { "not-converged" };
    RunManifest::new(&resolved, status, &[csv_path, json_path], started).write(out)?;
    print_json(&verdict)?;
    Ok(if a.require_convergence && !report.converged {
        Verdict::ChecksFailed
    } else {
        Verdict::Ok
    })
}

fn or_error<T: serde::Serialize>(r: superdrift::Result<T>) -> Value {
    match r {
        Ok(v) => serde_json::to_value(v).unwrap_or(Value::Null),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

pub fn constants(a: ConstantsArgs) -> anyhow::Result<Verdict> {
    let q = a.q.unwrap_or_else(|| default_q(a.dim));
    let r = parse_r(&a.r)?;
    let m = a.m.unwrap_or(a.mu.max(2.0));
    let table = ExponentTable::new(a.dim, q, r, a.theta, a.mu, m)?;
    let smallness = smallness_check(a.theta, a.norm_e, a.norm_f, a.norm_u0, a.c)?;
    let ball = if a.norm_e > 0.0 {
        or_error(BallParams::new(a.c * a.norm_e, a.c * (a.norm_f + a.norm_u0), a.theta))
    } else {
        Value::Null
    };
    print_json(&json!({
        "exponents": table,
        "identity_error": table.identity_error(),
        "smallness": smallness,
        "slicing": or_error(slicing_plan(a.theta, a.norm_e, a.m0, a.a_const, a.horizon)),
        "blowup": or_error(blowup_time(a.mu, r, a.dim, a.theta, a.c_mu, a.u0_norm)),
        "ball": ball,
    }))?;
    Ok(Verdict::Ok)
}
