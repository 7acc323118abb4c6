//! Self-describing run configuration (TOML or JSON) and its resolution into
//! a [`ProblemSpec`] and [`SolverConfig`].
//!
//! Coefficient forms are short strings:
//!
//! | key       | forms |
//! |-----------|-------|
//! | `E_form`  | `zero`, `linear[:scale]` (`scale·(x − centre)`), `uniform:e0,e1,e2`, `sine:amplitude,waves`, `csv:path` |
//! | `f_form`  | `zero`, `const:c`, `gaussian:amplitude,width` (centred), `csv:path` |
//! | `u0_form` | `gaussian` (uses `mass`, `width`), `csv:path` |
//!
//! CSV paths are relative to the configuration file. Drift tables have
//! columns `cell,e0[,e1[,e2]]`; scalar tables have `cell,value`.
//!
//! Resolution is layered: the scenario defaults of the chosen preset, then
//! each layer (configuration file, command-line overrides) merged key by key.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::estimates::ConstantsConfig;
use crate::field::{Field, Grid, MAX_DIM};
use crate::model::{make_problem, DriftField, Preset, PresetOptions, ProblemSpec, SourceField, DEFAULT_REG};
use crate::par::Exec;
use crate::solver::{DtPolicy, SolverConfig};

/// Initial Gaussian width of the kq scenario. The initial peak is low enough
/// that tenfold growth stays resolvable on 24³ cells of the default box.
pub const KQ_WIDTH: f64 = 2.0;

/// `reg_n`: a saturation level or `"inf"` for none.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegSetting {
    Level(f64),
    Text(String),
}

impl RegSetting {
    pub fn level(&self) -> Result<Option<f64>> {
        match self {
            RegSetting::Level(n) => Ok(Some(*n)),
            RegSetting::Text(s) if s.trim().eq_ignore_ascii_case("inf") => Ok(None),
            RegSetting::Text(s) => s
                .trim()
                .parse::<f64>()
                .map(Some)
                .map_err(|_| Error::Parse(format!("reg_n must be a number or \"inf\", got {s:?}"))),
        }
    }
}

/// Optional overrides of [`SolverConfig`]; unset keys keep their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    /// Fixed step; adaptive stepping when absent.
    pub dt: Option<f64>,
    pub safety: Option<f64>,
    pub dt_max: Option<f64>,
    pub lin_tol: Option<f64>,
    pub max_lin_iters: Option<usize>,
    pub cap_linf: Option<f64>,
    pub dt_min: Option<f64>,
    pub growth_cap: Option<f64>,
    pub snapshot_stride: Option<usize>,
    pub norm_m: Option<f64>,
    pub ineq_ms: Option<Vec<f64>>,
    pub max_steps: Option<usize>,
    /// Run kernels on the rayon pool; defaults to the build's default.
    pub parallel: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dim: usize,
    /// One entry per axis, or a single entry used for every axis.
    pub extents: Vec<f64>,
    pub cells: Vec<usize>,
    pub preset: Preset,
    pub theta: Option<f64>,
    pub reg_n: RegSetting,
    pub alpha: f64,
    pub beta: f64,
    pub horizon: f64,
    pub mass: f64,
    pub width: Option<f64>,
    #[serde(rename = "E_form")]
    pub drift_form: Option<String>,
    #[serde(rename = "f_form")]
    pub source_form: Option<String>,
    pub u0_form: Option<String>,
    /// Exponent `μ` used by diagnostics.
    pub mu: f64,
    pub solver: SolverSection,
    pub constants: ConstantsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dim: 2,
            extents: vec![1.0],
            cells: vec![32],
            preset: Preset::PowerDrift,
            theta: None,
            reg_n: RegSetting::Level(DEFAULT_REG),
            alpha: 1.0,
            beta: 1.0,
            horizon: 1.0,
            mass: 1.0,
            width: None,
            drift_form: None,
            source_form: None,
            u0_form: None,
            mu: 1.0,
            solver: SolverSection::default(),
            constants: ConstantsConfig::default(),
        }
    }
}

fn split_form(form: &str) -> (&str, Option<&str>) {
    match form.split_once(':') {
        Some((k, rest)) => (k.trim(), Some(rest.trim())),
        None => (form.trim(), None),
    }
}

fn numbers(args: Option<&str>, what: &str) -> Result<Vec<f64>> {
    let Some(a) = args else { return Ok(Vec::new()) };
    a.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("{what}: cannot read {s:?} as a number")))
        })
        .collect()
}

fn exactly<const K: usize>(v: Vec<f64>, what: &str) -> Result<[f64; K]> {
    v.try_into()
        .map_err(|v: Vec<f64>| Error::Parse(format!("{what} expects {K} numbers, got {}", v.len())))
}

/// Rows of a `cell,...` table, indexed by cell.
fn read_table(path: &Path, n_cells: usize, width: usize) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = vec![None; n_cells];
    for rec in reader.records() {
        let rec = rec?;
        let cell: usize = rec
            .get(0)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Parse(format!("{}: bad cell index in {rec:?}", path.display())))?;
        if cell >= n_cells {
            return Err(Error::GridMismatch(format!("{}: cell {cell} out of range", path.display())));
        }
        let vals = rec
            .iter()
            .skip(1)
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("{}: bad value {s:?}", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        if vals.is_empty() || vals.len() > width {
            return Err(Error::Parse(format!("{}: expected 1 to {width} values per row", path.display())));
        }
        rows[cell] = Some(vals);
    }
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| r.ok_or_else(|| Error::GridMismatch(format!("{}: no row for cell {i}", path.display()))))
        .collect()
}

/// Parse one layer: JSON when `json`, TOML otherwise.
pub fn parse_layer(text: &str, json: bool) -> Result<serde_json::Value> {
    let v: serde_json::Value = if json {
        serde_json::from_str(text)?
    } else {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?
    };
    if !v.is_object() {
        return Err(Error::Parse("configuration must be a table".into()));
    }
    Ok(v)
}

/// Recursive merge; tables merge key by key, everything else is replaced.
fn merge(base: &mut serde_json::Value, layer: serde_json::Value) {
    match (base, layer) {
        (serde_json::Value::Object(b), serde_json::Value::Object(l)) => {
            for (k, v) in l {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Scenario defaults: the kq preset starts from the three-dimensional
    /// concentration setup with a growth cap of 10.
    pub fn preset_defaults(preset: Preset) -> Self {
        match preset {
            Preset::Kq => RunConfig {
                preset,
                dim: 3,
                extents: vec![6.0],
                cells: vec![24],
                horizon: 2.0,
                width: Some(KQ_WIDTH),
                solver: SolverSection {
                    growth_cap: Some(10.0),
                    ..Default::default()
                },
                ..Default::default()
            },
            _ => RunConfig {
                preset,
                ..Default::default()
            },
        }
    }

    /// Merge `layers` over the defaults of the last preset named in them.
    pub fn resolve(layers: impl IntoIterator<Item = serde_json::Value>) -> Result<Self> {
        let layers: Vec<_> = layers.into_iter().collect();
        let preset = match layers.iter().rev().find_map(|l| l.get("preset")) {
            Some(p) => serde_json::from_value(p.clone())?,
            None => Preset::PowerDrift,
        };
        let mut value = serde_json::to_value(Self::preset_defaults(preset))?;
        for l in layers {
            merge(&mut value, l);
        }
        Ok(serde_json::from_value(value)?)
    }

    /// Parse by extension: `.json` as JSON, anything else as TOML.
    pub fn from_str_with_ext(text: &str, json: bool) -> Result<Self> {
        Self::resolve([parse_layer(text, json)?])
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        Self::from_str_with_ext(&text, json)
    }

    fn broadcast<T: Copy>(&self, v: &[T], what: &str) -> Result<Vec<T>> {
        match v.len() {
            1 => Ok(vec![v[0]; self.dim]),
            n if n == self.dim => Ok(v.to_vec()),
            n => invalid(format!("{what} has {n} entries for dimension {}", self.dim)),
        }
    }

    pub fn grid(&self) -> Result<Arc<Grid>> {
        let extents = self.broadcast(&self.extents, "extents")?;
        let cells = self.broadcast(&self.cells, "cells")?;
        Ok(Arc::new(Grid::new(self.dim, &extents, &cells)?))
    }

    /// Files referenced by the coefficient forms, resolved against `base`.
    pub fn referenced_files(&self, base: &Path) -> Vec<PathBuf> {
        [&self.drift_form, &self.source_form, &self.u0_form]
            .into_iter()
            .flatten()
            .filter_map(|f| match split_form(f) {
                ("csv", Some(p)) => Some(base.join(p)),
                _ => None,
            })
            .collect()
    }

    fn drift(&self, grid: &Grid, base: &Path) -> Result<Option<DriftField>> {
        let Some(form) = &self.drift_form else { return Ok(None) };
        let (kind, args) = split_form(form);
        let field = match kind {
            "zero" => DriftField::Zero,
            "linear" => {
                let v = numbers(args, "linear")?;
                let scale = match v.as_slice() {
                    [] => 1.0,
                    [s] => *s,
                    _ => return Err(Error::Parse("linear takes at most one number".into())),
                };
                DriftField::Linear {
                    center: grid.center(),
                    scale,
                }
            }
            "uniform" => {
                let mut v = numbers(args, "uniform")?;
                if v.is_empty() || v.len() > MAX_DIM {
                    return Err(Error::Parse(format!("uniform takes 1 to {MAX_DIM} components")));
                }
                v.resize(MAX_DIM, 0.0);
                DriftField::Uniform(exactly::<MAX_DIM>(v, "uniform")?)
            }
            "sine" => {
                let [amplitude, waves] = exactly::<2>(numbers(args, "sine")?, "sine")?;
                DriftField::Sine { amplitude, waves }
            }
            "csv" => {
                let path = base.join(args.unwrap_or_default());
                let rows = read_table(&path, grid.n_cells(), MAX_DIM)?;
                DriftField::Tabulated(
                    rows.into_iter()
                        .map(|r| {
                            let mut e = [0.0; MAX_DIM];
                            e[..r.len()].copy_from_slice(&r);
                            e
                        })
                        .collect(),
                )
            }
            other => return Err(Error::Parse(format!("unknown E_form {other:?}"))),
        };
        Ok(Some(field))
    }

    fn source(&self, grid: &Grid, base: &Path) -> Result<Option<SourceField>> {
        let Some(form) = &self.source_form else { return Ok(None) };
        let (kind, args) = split_form(form);
        let field = match kind {
            "zero" => SourceField::Zero,
            "const" => SourceField::Constant(exactly::<1>(numbers(args, "const")?, "const")?[0]),
            "gaussian" => {
                let [amplitude, width] = exactly::<2>(numbers(args, "gaussian")?, "gaussian")?;
                SourceField::Gaussian {
                    amplitude,
                    width,
                    center: grid.center(),
                }
            }
            "csv" => {
                let path = base.join(args.unwrap_or_default());
                SourceField::Tabulated(read_table(&path, grid.n_cells(), 1)?.into_iter().map(|r| r[0]).collect())
            }
            other => return Err(Error::Parse(format!("unknown f_form {other:?}"))),
        };
        Ok(Some(field))
    }

    /// Build the problem; CSV paths are resolved against `base`.
    pub fn problem(&self, base: &Path) -> Result<ProblemSpec> {
        let grid = self.grid()?;
        let opts = PresetOptions {
            theta: self.theta,
            reg: self.reg_n.level()?,
            mass: self.mass,
            width: self.width,
            horizon: self.horizon,
            alpha: self.alpha,
            beta: self.beta,
            drift: self.drift(&grid, base)?,
            source: self.source(&grid, base)?,
        };
        let problem = make_problem(self.preset, grid.clone(), opts)?;
        match self.u0_form.as_deref().map(split_form) {
            None | Some(("gaussian", None)) => Ok(problem),
            Some(("csv", Some(p))) => {
                let values = read_table(&base.join(p), grid.n_cells(), 1)?.into_iter().map(|r| r[0]).collect();
                problem.with_u0(Field::new(grid, values)?)
            }
            Some((other, _)) => Err(Error::Parse(format!("unknown u0_form {other:?}"))),
        }
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let s = &self.solver;
        let mut c = SolverConfig::default();
        if let Some(dt) = s.dt {
            c.dt = DtPolicy::Fixed { dt };
        } else if let DtPolicy::Adaptive { safety, dt_max } = c.dt {
            c.dt = DtPolicy::Adaptive {
                safety: s.safety.unwrap_or(safety),
                dt_max: s.dt_max.unwrap_or(dt_max),
            };
        }
        c.lin_tol = s.lin_tol.unwrap_or(c.lin_tol);
        c.max_lin_iters = s.max_lin_iters.unwrap_or(c.max_lin_iters);
        c.cap_linf = s.cap_linf.unwrap_or(c.cap_linf);
        c.dt_min = s.dt_min.unwrap_or(c.dt_min);
        c.growth_cap = s.growth_cap.or(c.growth_cap);
        c.snapshot_stride = s.snapshot_stride.unwrap_or(c.snapshot_stride);
        c.norm_m = s.norm_m.unwrap_or(c.norm_m);
        if let Some(ms) = &s.ineq_ms {
            c.ineq_ms = ms.clone();
        }
        c.max_steps = s.max_steps.unwrap_or(c.max_steps);
        if let Some(p) = s.parallel {
            c.exec = if p { Exec::Parallel } else { Exec::Sequential };
        }
        c.validate()?;
        Ok(c)
    }

    /// SHA-256 over the canonical JSON of the configuration followed by the
    /// bytes of every referenced CSV file.
    pub fn hash(&self, base: &Path) -> Result<String> {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self)?);
        for f in self.referenced_files(base) {
            h.update(fs::read(&f)?);
        }
        Ok(hex::encode(h.finalize()))
    }
}
