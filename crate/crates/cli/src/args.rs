use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};
use superdrift::config::{parse_layer, RunConfig};
use superdrift::io::SnapshotFormat;

#[derive(Parser, Debug)]
#[command(name = "superdrift", version, about = "Nonlinear Fokker-Planck simulator and estimate checker")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Integrate one problem and store its trajectory.
    Run(RunArgs),
    /// Run a grid of masses, growth exponents and saturation levels in parallel.
    Sweep(SweepArgs),
    /// Classify exponents into an existence regime.
    Regime(RegimeArgs),
    /// Re-check a stored trajectory.
    Diagnose(DiagnoseArgs),
    /// Paired runs and the L1 comparison inequality.
    ContractionTest(ContractionArgs),
    /// Picard iteration of the frozen-drift map.
    Fixedpoint(FixedpointArgs),
    /// Exponent tables, blow-up time, slicing plan and smallness verdict.
    Constants(ConstantsArgs),
}

/// Problem and solver settings; flags override the configuration file.
#[derive(Args, Debug, Clone, Default)]
pub struct ProblemArgs {
    /// TOML or JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub extents: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub cells: Option<Vec<usize>>,
    #[arg(long, allow_negative_numbers = true)]
    pub theta: Option<f64>,
    /// Saturation level or `inf`.
    #[arg(long = "reg-n")]
    pub reg_n: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub mass: Option<f64>,
    #[arg(long)]
    pub width: Option<f64>,
    #[arg(long = "E-form", alias = "e-form")]
    pub drift_form: Option<String>,
    #[arg(long = "f-form")]
    pub source_form: Option<String>,
    #[arg(long = "u0-form")]
    pub u0_form: Option<String>,
    /// Exponent used by diagnostics.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Fixed time step (adaptive when absent).
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long = "dt-max")]
    pub dt_max: Option<f64>,
    #[arg(long = "growth-cap")]
    pub growth_cap: Option<f64>,
    #[arg(long = "cap-linf")]
    pub cap_linf: Option<f64>,
    #[arg(long = "snapshot-stride")]
    pub snapshot_stride: Option<usize>,
    #[arg(long = "max-steps")]
    pub max_steps: Option<usize>,
    #[arg(long = "lin-tol")]
    pub lin_tol: Option<f64>,
    #[arg(long = "norm-m")]
    pub norm_m: Option<f64>,
    /// Keep every kernel on the calling thread.
    #[arg(long)]
    pub sequential: bool,
}

fn put<T: serde::Serialize>(map: &mut Map<String, Value>, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        map.insert(key.into(), json!(v));
    }
}

/// A resolved configuration together with the directory its CSV paths are relative to.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: RunConfig,
    pub base: PathBuf,
    pub hash: String,
}

impl ProblemArgs {
    /// Command-line overrides as one configuration layer.
    pub fn layer(&self) -> Value {
        let mut m = Map::new();
        put(&mut m, "preset", &self.preset);
        put(&mut m, "dim", &self.dim);
        put(&mut m, "extents", &self.extents);
        put(&mut m, "cells", &self.cells);
        put(&mut m, "theta", &self.theta);
        if let Some(r) = &self.reg_n {
            // Non-finite numbers would serialize as null; keep them as text.
            let v = match r.trim().parse::<f64>() {
                Ok(x) if x.is_finite() => json!(x),
                _ => json!(r),
            };
            m.insert("reg_n".into(), v);
        }
        put(&mut m, "alpha", &self.alpha);
        put(&mut m, "beta", &self.beta);
        put(&mut m, "horizon", &self.horizon);
        put(&mut m, "mass", &self.mass);
        put(&mut m, "width", &self.width);
        put(&mut m, "E_form", &self.drift_form);
        put(&mut m, "f_form", &self.source_form);
        put(&mut m, "u0_form", &self.u0_form);
        put(&mut m, "mu", &self.mu);
        let mut s = Map::new();
        put(&mut s, "dt", &self.dt);
        put(&mut s, "dt_max", &self.dt_max);
        put(&mut s, "growth_cap", &self.growth_cap);
        put(&mut s, "cap_linf", &self.cap_linf);
        put(&mut s, "snapshot_stride", &self.snapshot_stride);
        put(&mut s, "max_steps", &self.max_steps);
        put(&mut s, "lin_tol", &self.lin_tol);
        put(&mut s, "norm_m", &self.norm_m);
        if self.sequential {
            s.insert("parallel".into(), json!(false));
        }
        if !s.is_empty() {
            m.insert("solver".into(), Value::Object(s));
        }
        Value::Object(m)
    }

    /// File layer (if any), then flag overrides, then `extra`.
    pub fn resolve_with(&self, extra: Option<Value>) -> anyhow::Result<Resolved> {
        let mut layers = Vec::new();
        let base = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
                layers.push(parse_layer(&text, json).with_context(|| format!("parsing {}", path.display()))?);
                path.parent().map(Path::to_path_buf).unwrap_or_default()
            }
            None => PathBuf::from("."),
        };
        layers.push(self.layer());
        layers.extend(extra);
        let config = RunConfig::resolve(layers)?;
        let hash = config.hash(&base)?;
        Ok(Resolved { config, base, hash })
    }

    pub fn resolve(&self) -> anyhow::Result<Resolved> {
        self.resolve_with(None)
    }
}

#[derive(Args, Debug)]
pub struct OutputArgs {
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Snapshot storage: `bin` or `csv`.
    #[arg(long = "snapshot-format", default_value = "bin")]
    pub snapshot_format: SnapshotFormat,
    /// Exit with status 2 when blow-up is suspected.
    #[arg(long = "fail-on-blowup")]
    pub fail_on_blowup: bool,
    /// Also run diagnostics; exit 3 if any check fails.
    #[arg(long)]
    pub diagnose: bool,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, value_delimiter = ',')]
    pub masses: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub thetas: Vec<f64>,
    /// Saturation levels; `inf` disables saturation.
    #[arg(long = "reg-ns", value_delimiter = ',')]
    pub reg_ns: Vec<String>,
    #[arg(long = "snapshot-format", default_value = "bin")]
    pub snapshot_format: SnapshotFormat,
    #[arg(long = "fail-on-blowup")]
    pub fail_on_blowup: bool,
}

#[derive(Args, Debug)]
pub struct RegimeArgs {
    /// Space dimension.
    #[arg(long = "N", alias = "dim")]
    pub dim: usize,
    /// Growth exponent; decimals are read exactly, fractions like `1/3` accepted.
    #[arg(long)]
    pub theta: String,
    /// Drift integrability, or `inf`.
    #[arg(long, default_value = "inf")]
    pub r: String,
    #[arg(long, default_value = "1")]
    pub mu: String,
    #[arg(long)]
    pub q: Option<String>,
    /// Constant of the L^mu differential inequality, for the blow-up time.
    #[arg(long = "c-mu", default_value_t = 1.0)]
    pub c_mu: f64,
    /// `‖u0‖_mu`, for the blow-up time.
    #[arg(long = "u0-norm", default_value_t = 1.0)]
    pub u0_norm: f64,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    /// Directory written by `run`.
    #[arg(long)]
    pub dir: PathBuf,
    /// Override the configured exponent mu.
    #[arg(long)]
    pub mu: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ContractionArgs {
    /// Settings of the first run `v`.
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Mass of the second run `w` (default: half of `v`'s).
    #[arg(long = "w-mass")]
    pub w_mass: Option<f64>,
    #[arg(long = "w-f-form")]
    pub w_source_form: Option<String>,
    #[arg(long = "w-u0-form")]
    pub w_u0_form: Option<String>,
}

#[derive(Args, Debug)]
pub struct FixedpointArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long = "max-iter", default_value_t = 50)]
    pub max_iter: usize,
    /// Source integrability (default `2(N+2)/(N+4)`).
    #[arg(long)]
    pub q: Option<f64>,
    /// Space-time drift integrability, or `inf`.
    #[arg(long, default_value = "inf")]
    pub r: String,
    /// Constant of the linear estimate in the smallness condition.
    #[arg(long = "C", default_value_t = 1.0)]
    pub c: f64,
    /// Exit with status 3 unless the iteration converges.
    #[arg(long = "require-convergence")]
    pub require_convergence: bool,
}

#[derive(Args, Debug)]
pub struct ConstantsArgs {
    #[arg(long = "N", alias = "dim")]
    pub dim: usize,
    #[arg(long)]
    pub theta: f64,
    /// Source integrability (default `2(N+2)/(N+4)`).
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long, default_value = "inf")]
    pub r: String,
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    /// Energy exponent (default `max(mu, 2)`).
    #[arg(long)]
    pub m: Option<f64>,
    /// Constant of the smallness condition.
    #[arg(long = "C", default_value_t = 1.0)]
    pub c: f64,
    #[arg(long = "norm-e", default_value_t = 0.0)]
    pub norm_e: f64,
    #[arg(long = "norm-f", default_value_t = 0.0)]
    pub norm_f: f64,
    #[arg(long = "norm-u0", default_value_t = 0.0)]
    pub norm_u0: f64,
    /// Mass budget for the slicing plan.
    #[arg(long, default_value_t = 1.0)]
    pub m0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
    #[arg(long = "a-const", default_value_t = 1.0)]
    pub a_const: f64,
    #[arg(long = "c-mu", default_value_t = 1.0)]
    pub c_mu: f64,
    /// `‖u0‖_mu`, for the blow-up time.
    #[arg(long = "u0-norm", default_value_t = 1.0)]
    pub u0_norm: f64,
}

/// `inf` or a positive number.
pub fn parse_r(s: &str) -> anyhow::Result<f64> {
    if s.trim().eq_ignore_ascii_case("inf") {
        return Ok(f64::INFINITY);
    }
    let r: f64 = s.trim().parse().with_context(|| format!("r must be a number or inf, got {s:?}"))?;
    anyhow::ensure!(r > 0.0, "r must be positive, got {r}");
    Ok(r)
}
