use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn superdrift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_superdrift"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout)))
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &["--dim", "2", "--cells", "16", "--horizon", "0.05", "--theta", "0.5"];

fn with_small<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(SMALL).chain(tail).copied().collect()
}

#[test]
fn regime_reports_the_global_regime_for_a_truncated_third() {
    let out = superdrift(&["regime", "--N", "3", "--theta", "0.3333333", "--r", "inf"]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    assert_eq!(v["regime"], "GlobalSmallTheta");
    assert!(v["slack"].as_f64().unwrap() > 0.0);
    for key in ["q_star", "q_star_star", "gamma", "sigma", "b", "T_star"] {
        assert!(v["exponents"].get(key).is_some(), "missing {key}");
    }
}

#[test]
fn constants_report_the_smallness_threshold() {
    let out = superdrift(&["constants", "--theta", "1", "--C", "1", "--q", "2", "--N", "3"]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    assert_eq!(v["smallness"]["threshold"].as_f64().unwrap(), 0.25);
    assert!(v["identity_error"].as_f64().unwrap() < 1e-12);
}

#[test]
fn large_kq_mass_is_flagged_and_fail_on_blowup_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("kq");
    let out = superdrift(&[
        "run",
        "--preset",
        "kq",
        "--mass",
        "50",
        "--horizon",
        "2",
        "--out",
        path_str(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "blow-up-suspected");

    let forced = dir.path().join("forced");
    let args = with_small(&["run", "--cap-linf", "1e-3", "--fail-on-blowup", "--out", path_str(&forced)], &[]);
    assert_eq!(code(&superdrift(&args)), 2);
}

#[test]
fn malformed_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "dim = [oops").unwrap();
    assert_eq!(
        code(&superdrift(&["run", "--config", path_str(&bad), "--out", path_str(dir.path())])),
        1
    );
    let unknown = dir.path().join("unknown.toml");
    fs::write(&unknown, "dimension = 2\n").unwrap();
    assert_eq!(
        code(&superdrift(&["run", "--config", path_str(&unknown), "--out", path_str(dir.path())])),
        1
    );
    assert_eq!(code(&superdrift(&["run", "--preset", "nope", "--out", path_str(dir.path())])), 1);
    assert_eq!(code(&superdrift(&["frobnicate"])), 1);
    assert_eq!(code(&superdrift(&["diagnose", "--dir", path_str(&dir.path().join("missing"))])), 1);
    let threads = Command::new(env!("CARGO_BIN_EXE_superdrift"))
        .args(["regime", "--N", "3", "--theta", "0.1"])
        .env("SUPERDRIFT_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&threads), 1);
}

#[test]
fn identical_configs_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "dim = 2\ncells = [16]\nhorizon = 0.05\ntheta = 0.5\nE_form = \"uniform:1,-0.5\"\nf_form = \"const:0.5\"\n[solver]\nsnapshot_stride = 2\n",
    )
    .unwrap();
    let mut hashes = Vec::new();
    for (k, threads) in ["1", "4"].iter().enumerate() {
        let out = dir.path().join(format!("r{k}"));
        let res = Command::new(env!("CARGO_BIN_EXE_superdrift"))
            .args([
                "run",
                "--config",
                path_str(&cfg),
                "--snapshot-format",
                "csv",
                "--out",
                path_str(&out),
            ])
            .env("SUPERDRIFT_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(code(&res), 0);
        hashes.push(stdout_json(&res)["config_hash"].clone());
    }
    assert_eq!(hashes[0], hashes[1]);
    for f in ["norms.csv", "snapshots.csv", "final.csv", "trajectory.json"] {
        assert_eq!(
            fs::read(dir.path().join("r0").join(f)).unwrap(),
            fs::read(dir.path().join("r1").join(f)).unwrap(),
            "{f}"
        );
    }
    let norms = fs::read_to_string(dir.path().join("r0/norms.csv")).unwrap();
    assert!(norms.starts_with("t,dt,L1,L2,Lm,Linf,lin_iters\n"));
}

#[test]
fn stored_runs_can_be_rediagnosed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let run = superdrift(&with_small(&["run", "--diagnose", "--out", path_str(&out)], &[]));
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stdout));
    assert_eq!(stdout_json(&run)["checks_ok"], true);
    let diag = superdrift(&["diagnose", "--dir", path_str(&out)]);
    assert_eq!(code(&diag), 0);
    assert_eq!(stdout_json(&diag)["all_ok"], true);
    let csv = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert!(csv.starts_with("t,mass_slack,"));
}

#[test]
fn contraction_test_emits_gap_and_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pair");
    let res = superdrift(&with_small(
        &["contraction-test", "--out", path_str(&out)],
        &["--w-f-form", "const:-1"],
    ));
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let v = stdout_json(&res);
    assert_eq!(v["pass"], true);
    assert!(v["order"]["ok"].as_bool().unwrap());
    let gap = fs::read_to_string(out.join("gap.csv")).unwrap();
    assert!(gap.starts_with("t,lhs,rhs,gap\n"));
}

#[test]
fn fixedpoint_converges_on_small_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fp");
    let res = superdrift(&[
        "fixedpoint",
        "--dim",
        "2",
        "--cells",
        "12",
        "--horizon",
        "0.05",
        "--theta",
        "0.5",
        "--mass",
        "0.2",
        "--E-form",
        "uniform:0.3,0.1",
        "--dt",
        "0.002",
        "--require-convergence",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let v = stdout_json(&res);
    assert_eq!(v["converged"], true);
    assert_eq!(v["smallness"]["satisfied"], true);
    assert!(v["final_norm"].as_f64().unwrap() > 0.0);
    let csv = fs::read_to_string(out.join("picard.csv")).unwrap();
    assert!(csv.starts_with("k,norm_qss,diff\n"));
}

#[test]
fn sweep_covers_the_parameter_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let res = superdrift(&[
        "sweep",
        "--dim",
        "1",
        "--cells",
        "32",
        "--horizon",
        "0.02",
        "--masses",
        "0.5,1",
        "--thetas",
        "0.5,1",
        "--reg-ns",
        "10,inf",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 9);
    assert!(table.lines().skip(1).all(|l| l.contains(",completed,")));
    assert!(out.join("run_007/manifest.json").exists());
}
