//! Problem data: the saturated nonlinearity, coefficient fields and presets.
//!
//! The modelled equation is `∂t u − div(M∇u + E g(u)) = f` with zero
//! Dirichlet data. The drift therefore transports `g(u)` with velocity `−E`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{abs_pow, truncation_pair, Field, Grid, MAX_DIM};

/// Default saturation level; large enough to be invisible at desk scale.
pub const DEFAULT_REG: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonlinearForm {
    /// `h(s) = |s|^θ s`
    Power,
    /// `h(s) = s(1+s)` for `s ≥ 0`, extended oddly; growth exponent 1.
    Kq,
}

/// `g_n`, the saturated version of `h`; `reg = None` means `n = ∞` (`g = h`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nonlinearity {
    form: NonlinearForm,
    theta: f64,
    reg: Option<f64>,
}

impl Nonlinearity {
    pub fn power(theta: f64, reg: Option<f64>) -> Result<Self> {
        if !(theta >= 0.0 && theta.is_finite()) {
            return invalid(format!("growth exponent must be finite and >= 0, got {theta}"));
        }
        Self::check_reg(reg)?;
        Ok(Nonlinearity {
            form: NonlinearForm::Power,
            theta,
            reg,
        })
    }

    pub fn kq(reg: Option<f64>) -> Result<Self> {
        Self::check_reg(reg)?;
        Ok(Nonlinearity {
            form: NonlinearForm::Kq,
            theta: 1.0,
            reg,
        })
    }

    fn check_reg(reg: Option<f64>) -> Result<()> {
        match reg {
            Some(n) if !(n > 0.0 && n.is_finite()) => invalid(format!("regularisation level must be positive and finite, got {n}")),
            _ => Ok(()),
        }
    }

    pub fn form(&self) -> NonlinearForm {
        self.form
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn reg(&self) -> Option<f64> {
        self.reg
    }

    pub fn with_reg(self, reg: Option<f64>) -> Result<Self> {
        Self::check_reg(reg)?;
        Ok(Nonlinearity { reg, ..self })
    }

    /// Odd magnitude `|h(s)|` before saturation.
    #[inline]
    fn raw_magnitude(&self, a: f64) -> f64 {
        match self.form {
            NonlinearForm::Power => {
                if self.theta == 0.0 {
                    a
                } else {
                    a.powf(self.theta) * a
                }
            }
            NonlinearForm::Kq => a * (1.0 + a),
        }
    }

    /// `g_n(s)`.
    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        let a = s.abs();
        let num = self.raw_magnitude(a);
        let mag = match self.reg {
            None => num,
            Some(n) => {
                let sat = match self.form {
                    NonlinearForm::Power => num,
                    NonlinearForm::Kq => a * a,
                };
                num / (1.0 + sat / n)
            }
        };
        mag.copysign(s)
    }

    /// `h(s)` without saturation.
    pub fn unregularized(&self, s: f64) -> f64 {
        self.raw_magnitude(s.abs()).copysign(s)
    }

    /// Upper bound for `sup_{|s| ≤ u_max} |g_n'(s)|`.
    ///
    /// Exact for the power form: `g'` increases up to
    /// `s* = (nθ/(θ+2))^{1/(θ+1)}` and decreases after. For the `kq` form
    /// `|g'(s)| ≤ 1 + 2|s|`.
    pub fn derivative_bound(&self, u_max: f64) -> f64 {
        let u = u_max.abs();
        match self.form {
            NonlinearForm::Power => {
                let t = self.theta;
                let s = match self.reg {
                    None => u,
                    Some(n) => u.min((n * t / (t + 2.0)).powf(1.0 / (t + 1.0))),
                };
                let sp = if t == 0.0 { 1.0 } else { s.powf(t) };
                let denom = match self.reg {
                    None => 1.0,
                    Some(n) => 1.0 + sp * s / n,
                };
                (t + 1.0) * sp / (denom * denom)
            }
            NonlinearForm::Kq => 1.0 + 2.0 * u,
        }
    }

    /// `|g(s)|² |s|^{m-2}`, the integrand bounding the drift's contribution to
    /// `d/dt ∫|u|^m`; `0` at `s = 0`.
    pub fn energy_integrand(&self, s: f64, m: f64) -> f64 {
        let a = s.abs();
        if a == 0.0 {
            return 0.0;
        }
        match self.form {
            NonlinearForm::Power => abs_pow(a, 2.0 * self.theta + m),
            NonlinearForm::Kq => {
                let g = self.eval(a);
                g * g * a.powf(m - 2.0)
            }
        }
    }
}

impl fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let form = match self.form {
            NonlinearForm::Power => "power",
            NonlinearForm::Kq => "kq",
        };
        match self.reg {
            Some(n) => write!(f, "{form}(theta={}, n={n})", self.theta),
            None => write!(f, "{form}(theta={}, n=inf)", self.theta),
        }
    }
}

type VectorFn = Arc<dyn Fn(f64, &[f64; MAX_DIM]) -> [f64; MAX_DIM] + Send + Sync>;
type ScalarFn = Arc<dyn Fn(f64, &[f64; MAX_DIM]) -> f64 + Send + Sync>;

/// Drift coefficient `E(t, x)`.
#[derive(Clone)]
pub enum DriftField {
    Zero,
    Uniform([f64; MAX_DIM]),
    /// `E(x) = scale · (x − center)`.
    Linear {
        center: [f64; MAX_DIM],
        scale: f64,
    },
    /// `E_a(x) = amplitude · sin(2π · waves · x_a / L_a)`.
    Sine {
        amplitude: f64,
        waves: f64,
    },
    /// One vector per cell; face values are averages of the adjacent cells.
    Tabulated(Vec<[f64; MAX_DIM]>),
    Custom {
        f: VectorFn,
        time_dependent: bool,
    },
}

impl fmt::Debug for DriftField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriftField::Zero => write!(f, "Zero"),
            DriftField::Uniform(e) => write!(f, "Uniform({e:?})"),
            DriftField::Linear { center, scale } => write!(f, "Linear {{ center: {center:?}, scale: {scale} }}"),
            DriftField::Sine { amplitude, waves } => write!(f, "Sine {{ amplitude: {amplitude}, waves: {waves} }}"),
            DriftField::Tabulated(v) => write!(f, "Tabulated({} cells)", v.len()),
            DriftField::Custom { time_dependent, .. } => write!(f, "Custom {{ time_dependent: {time_dependent} }}"),
        }
    }
}

/// Transport velocity `−E·e_a` on every face, one array per axis in face-grid order.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceVelocities {
    pub(crate) axes: Vec<Vec<f64>>,
}

impl FaceVelocities {
    #[inline]
    pub fn low(&self, grid: &Grid, idx: usize, axis: usize) -> f64 {
        self.axes[axis][grid.low_face(idx, axis)]
    }

    #[inline]
    pub fn high(&self, grid: &Grid, idx: usize, axis: usize) -> f64 {
        self.axes[axis][grid.low_face(idx, axis) + grid.stride(axis)]
    }

    pub fn is_zero(&self) -> bool {
        self.axes.iter().all(|a| a.iter().all(|&v| v == 0.0))
    }

    pub fn max_abs(&self) -> f64 {
        self.axes.iter().flat_map(|a| a.iter()).fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}

impl DriftField {
    pub fn custom(f: impl Fn(f64, &[f64; MAX_DIM]) -> [f64; MAX_DIM] + Send + Sync + 'static, time_dependent: bool) -> Self {
        DriftField::Custom {
            f: Arc::new(f),
            time_dependent,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            DriftField::Zero => true,
            DriftField::Uniform(e) => e.iter().all(|&v| v == 0.0),
            DriftField::Linear { scale, .. } => *scale == 0.0,
            DriftField::Sine { amplitude, .. } => *amplitude == 0.0,
            DriftField::Tabulated(v) => v.iter().all(|e| e.iter().all(|&c| c == 0.0)),
            DriftField::Custom { .. } => false,
        }
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(self, DriftField::Custom { time_dependent: true, .. })
    }

    /// Closed-form value at a point; `None` for tabulated data.
    fn at(&self, grid: &Grid, t: f64, x: &[f64; MAX_DIM]) -> Option<[f64; MAX_DIM]> {
        let dim = grid.dim();
        let mut e = [0.0; MAX_DIM];
        match self {
            DriftField::Zero => {}
            DriftField::Uniform(u) => e[..dim].copy_from_slice(&u[..dim]),
            DriftField::Linear { center, scale } => {
                for a in 0..dim {
                    e[a] = scale * (x[a] - center[a]);
                }
            }
            DriftField::Sine { amplitude, waves } => {
                let ext = grid.extents();
                for a in 0..dim {
                    e[a] = amplitude * (2.0 * std::f64::consts::PI * waves * x[a] / ext[a]).sin();
                }
            }
            DriftField::Tabulated(_) => return None,
            DriftField::Custom { f, .. } => {
                let v = f(t, x);
                e[..dim].copy_from_slice(&v[..dim]);
            }
        }
        Some(e)
    }

    /// `E` at cell centres.
    pub fn cell_values(&self, grid: &Grid, t: f64) -> Vec<[f64; MAX_DIM]> {
        if let DriftField::Tabulated(v) = self {
            return v.clone();
        }
        (0..grid.n_cells())
            .map(|i| self.at(grid, t, &grid.cell_center(i)).expect("closed form"))
            .collect()
    }

    /// Transport velocity `−E·e_a` at every face centre.
    pub fn face_velocities(&self, grid: &Grid, t: f64) -> FaceVelocities {
        let axes = (0..grid.dim())
            .map(|axis| {
                (0..grid.face_count(axis))
                    .map(|fid| match self {
                        DriftField::Tabulated(v) => {
                            let (lo, hi) = grid.face_cells(axis, fid);
                            let e = match (lo, hi) {
                                (Some(l), Some(h)) => 0.5 * (v[l][axis] + v[h][axis]),
                                (Some(c), None) | (None, Some(c)) => v[c][axis],
                                (None, None) => 0.0,
                            };
                            -e
                        }
                        _ => -self.at(grid, t, &grid.face_center(axis, fid)).expect("closed form")[axis],
                    })
                    .collect()
            })
            .collect();
        FaceVelocities { axes }
    }

    /// `sup |E|` over cell centres and face centres (Euclidean norm at centres).
    pub fn sup_norm(&self, grid: &Grid, t: f64) -> f64 {
        let cells = self
            .cell_values(grid, t)
            .iter()
            .map(|e| e.iter().map(|c| c * c).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        cells.max(self.face_velocities(grid, t).max_abs())
    }

    /// `‖|E|‖_{L^r(Ω)}` at time `t`; `r = ∞` gives the cell-centre sup.
    pub fn lr_norm(&self, grid: &Grid, t: f64, r: f64) -> f64 {
        let mags = self
            .cell_values(grid, t)
            .iter()
            .map(|e| e.iter().map(|c| c * c).sum::<f64>().sqrt())
            .collect::<Vec<_>>();
        if r.is_infinite() {
            mags.into_iter().fold(0.0, f64::max)
        } else {
            (mags.iter().map(|m| m.powf(r)).sum::<f64>() * grid.cell_volume()).powf(1.0 / r)
        }
    }

    fn validate(&self, grid: &Grid) -> Result<()> {
        if let DriftField::Tabulated(v) = self {
            if v.len() != grid.n_cells() {
                return Err(Error::GridMismatch(format!(
                    "tabulated drift has {} entries for {} cells",
                    v.len(),
                    grid.n_cells()
                )));
            }
        }
        let finite = self.cell_values(grid, 0.0).iter().all(|e| e.iter().all(|c| c.is_finite()))
            && self.face_velocities(grid, 0.0).axes.iter().all(|a| a.iter().all(|c| c.is_finite()));
        if !finite {
            return invalid("drift field is not finite everywhere");
        }
        Ok(())
    }
}

/// Source term `f(t, x)`.
#[derive(Clone)]
pub enum SourceField {
    Zero,
    Constant(f64),
    /// One value per cell, constant in time.
    Tabulated(Vec<f64>),
    /// `amplitude · exp(−|x − center|² / (2 width²))`.
    Gaussian {
        amplitude: f64,
        width: f64,
        center: [f64; MAX_DIM],
    },
    Custom {
        f: ScalarFn,
        time_dependent: bool,
    },
}

impl fmt::Debug for SourceField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceField::Zero => write!(f, "Zero"),
            SourceField::Constant(c) => write!(f, "Constant({c})"),
            SourceField::Tabulated(v) => write!(f, "Tabulated({} cells)", v.len()),
            SourceField::Gaussian { amplitude, width, center } => {
                write!(f, "Gaussian {{ amplitude: {amplitude}, width: {width}, center: {center:?} }}")
            }
            SourceField::Custom { time_dependent, .. } => write!(f, "Custom {{ time_dependent: {time_dependent} }}"),
        }
    }
}

impl SourceField {
    pub fn custom(f: impl Fn(f64, &[f64; MAX_DIM]) -> f64 + Send + Sync + 'static, time_dependent: bool) -> Self {
        SourceField::Custom {
            f: Arc::new(f),
            time_dependent,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            SourceField::Zero => true,
            SourceField::Constant(c) => *c == 0.0,
            SourceField::Tabulated(v) => v.iter().all(|&c| c == 0.0),
            SourceField::Gaussian { amplitude, .. } => *amplitude == 0.0,
            SourceField::Custom { .. } => false,
        }
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(self, SourceField::Custom { time_dependent: true, .. })
    }

    /// `T_n(f(t, ·))` at cell centres; no truncation when `reg` is `None`.
    pub fn cell_values(&self, grid: &Grid, t: f64, reg: Option<f64>) -> Vec<f64> {
        let raw: Vec<f64> = match self {
            SourceField::Zero => vec![0.0; grid.n_cells()],
            SourceField::Constant(c) => vec![*c; grid.n_cells()],
            SourceField::Tabulated(v) => v.clone(),
            SourceField::Gaussian { amplitude, width, center } => (0..grid.n_cells())
                .map(|i| {
                    let x = grid.cell_center(i);
                    let r2: f64 = (0..grid.dim()).map(|a| (x[a] - center[a]).powi(2)).sum();
                    amplitude * (-r2 / (2.0 * width * width)).exp()
                })
                .collect(),
            SourceField::Custom { f, .. } => (0..grid.n_cells()).map(|i| f(t, &grid.cell_center(i))).collect(),
        };
        match reg {
            Some(n) => raw.into_iter().map(|s| s.clamp(-n, n)).collect(),
            None => raw,
        }
    }

    fn validate(&self, grid: &Grid) -> Result<()> {
        if let SourceField::Tabulated(v) = self {
            if v.len() != grid.n_cells() {
                return Err(Error::GridMismatch(format!(
                    "tabulated source has {} entries for {} cells",
                    v.len(),
                    grid.n_cells()
                )));
            }
        }
        if self.cell_values(grid, 0.0, None).iter().any(|v| !v.is_finite()) {
            return invalid("source is not finite everywhere");
        }
        Ok(())
    }
}

/// Per-cell diagonal diffusion matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Diffusivity {
    entries: Vec<[f64; MAX_DIM]>,
}

impl Diffusivity {
    pub fn identity(grid: &Grid) -> Self {
        Diffusivity::scalar(grid, 1.0)
    }

    pub fn scalar(grid: &Grid, c: f64) -> Self {
        Diffusivity {
            entries: vec![[c; MAX_DIM]; grid.n_cells()],
        }
    }

    pub fn from_entries(entries: Vec<[f64; MAX_DIM]>) -> Self {
        Diffusivity { entries }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64; MAX_DIM]) -> [f64; MAX_DIM]) -> Self {
        Diffusivity {
            entries: (0..grid.n_cells()).map(|i| f(&grid.cell_center(i))).collect(),
        }
    }

    pub fn entries(&self) -> &[[f64; MAX_DIM]] {
        &self.entries
    }

    /// Smallest diagonal entry over active axes.
    pub fn min_entry(&self, dim: usize) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e[..dim].iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    /// Reject entries outside `[alpha, beta]`.
    pub fn validate(&self, grid: &Grid, alpha: f64, beta: f64) -> Result<()> {
        if !(alpha > 0.0 && alpha <= beta && beta.is_finite()) {
            return Err(Error::Ellipticity(format!(
                "bounds must satisfy 0 < alpha <= beta, got {alpha}, {beta}"
            )));
        }
        if self.entries.len() != grid.n_cells() {
            return Err(Error::GridMismatch(format!(
                "diffusivity has {} entries for {} cells",
                self.entries.len(),
                grid.n_cells()
            )));
        }
        for (i, e) in self.entries.iter().enumerate() {
            for (a, &m) in e[..grid.dim()].iter().enumerate() {
                if !(m >= alpha && m <= beta) {
                    return Err(Error::Ellipticity(format!(
                        "entry {m} on axis {a} of cell {i} outside [{alpha}, {beta}]"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CoefficientSet {
    pub diffusivity: Diffusivity,
    pub drift: DriftField,
    pub source: SourceField,
    pub u0: Field,
}

/// A fully validated initial-boundary value problem.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    grid: Arc<Grid>,
    coefficients: CoefficientSet,
    nonlinearity: Nonlinearity,
    horizon: f64,
    alpha: f64,
    beta: f64,
}

impl ProblemSpec {
    pub fn new(
        grid: Arc<Grid>,
        coefficients: CoefficientSet,
        nonlinearity: Nonlinearity,
        horizon: f64,
        alpha: f64,
        beta: f64,
    ) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return invalid(format!("horizon must be positive, got {horizon}"));
        }
        coefficients.diffusivity.validate(&grid, alpha, beta)?;
        coefficients.drift.validate(&grid)?;
        coefficients.source.validate(&grid)?;
        if !coefficients.u0.same_grid(&Field::zeros(grid.clone())) {
            return Err(Error::GridMismatch("initial datum lives on a different grid".into()));
        }
        coefficients.u0.usable()?;
        Ok(ProblemSpec {
            grid,
            coefficients,
            nonlinearity,
            horizon,
            alpha,
            beta,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn coefficients(&self) -> &CoefficientSet {
        &self.coefficients
    }

    pub fn diffusivity(&self) -> &Diffusivity {
        &self.coefficients.diffusivity
    }

    pub fn drift(&self) -> &DriftField {
        &self.coefficients.drift
    }

    pub fn source(&self) -> &SourceField {
        &self.coefficients.source
    }

    pub fn u0(&self) -> &Field {
        &self.coefficients.u0
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nonlinearity
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `T_n(u0)`, the datum actually evolved.
    pub fn truncated_u0(&self) -> Field {
        match self.nonlinearity.reg {
            Some(n) => self
                .u0()
                .map(|s| truncation_pair(s, n).expect("n > 0").0)
                .expect("truncation keeps values finite"),
            None => self.u0().clone(),
        }
    }

    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return invalid(format!("horizon must be positive, got {horizon}"));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn with_u0(mut self, u0: Field) -> Result<Self> {
        if !u0.same_grid(self.u0()) {
            return Err(Error::GridMismatch("initial datum lives on a different grid".into()));
        }
        u0.usable()?;
        self.coefficients.u0 = u0;
        Ok(self)
    }

    pub fn with_source(mut self, source: SourceField) -> Result<Self> {
        source.validate(&self.grid)?;
        self.coefficients.source = source;
        Ok(self)
    }

    pub fn with_nonlinearity(mut self, nonlinearity: Nonlinearity) -> Self {
        self.nonlinearity = nonlinearity;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// `E ≡ 0`, `M ≡ I`.
    Heat,
    /// `M ≡ I`, `E(x) = x − center`, `h(u) = u(1+u)`.
    Kq,
    /// `M ≡ I`, `E(x) = x − center`, `h(u) = |u|^θ u`.
    PowerDrift,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heat" => Ok(Preset::Heat),
            "kq" => Ok(Preset::Kq),
            "power-drift" | "power_drift" => Ok(Preset::PowerDrift),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Heat => "heat",
            Preset::Kq => "kq",
            Preset::PowerDrift => "power-drift",
        })
    }
}

/// Knobs for [`make_problem`]; unset values fall back to per-preset defaults.
#[derive(Clone, Debug)]
pub struct PresetOptions {
    pub theta: Option<f64>,
    /// `None` disables saturation.
    pub reg: Option<f64>,
    pub mass: f64,
    /// Gaussian width; defaults to a tenth of the shortest extent.
    pub width: Option<f64>,
    pub horizon: f64,
    pub alpha: f64,
    pub beta: f64,
    pub drift: Option<DriftField>,
    pub source: Option<SourceField>,
}

impl Default for PresetOptions {
    fn default() -> Self {
        PresetOptions {
            theta: None,
            reg: Some(DEFAULT_REG),
            mass: 1.0,
            width: None,
            horizon: 1.0,
            alpha: 1.0,
            beta: 1.0,
            drift: None,
            source: None,
        }
    }
}

/// Gaussian bump centred in the box, rescaled so its discrete integral is `mass`.
pub fn normalized_gaussian(grid: Arc<Grid>, mass: f64, width: f64) -> Result<Field> {
    if !(width > 0.0) {
        return invalid(format!("Gaussian width must be positive, got {width}"));
    }
    if !(mass >= 0.0 && mass.is_finite()) {
        return invalid(format!("mass must be finite and >= 0, got {mass}"));
    }
    let c = grid.center();
    let dim = grid.dim();
    let shape = Field::from_fn(grid.clone(), |x| {
        let r2: f64 = (0..dim).map(|a| (x[a] - c[a]).powi(2)).sum();
        (-r2 / (2.0 * width * width)).exp()
    })?;
    let total = shape.integral();
    if !(total > 0.0) {
        return invalid("Gaussian underflows on this grid");
    }
    shape.map(|v| v * mass / total)
}

pub fn make_problem(preset: Preset, grid: Arc<Grid>, opts: PresetOptions) -> Result<ProblemSpec> {
    let width = opts
        .width
        .unwrap_or_else(|| grid.extents().iter().copied().fold(f64::INFINITY, f64::min) / 10.0);
    let u0 = normalized_gaussian(grid.clone(), opts.mass, width)?;
    let inward = DriftField::Linear {
        center: grid.center(),
        scale: 1.0,
    };
    let (default_drift, nonlinearity) = match preset {
        Preset::Heat => (DriftField::Zero, Nonlinearity::power(opts.theta.unwrap_or(0.0), opts.reg)?),
        Preset::Kq => {
            if let Some(t) = opts.theta {
                if t != 1.0 {
                    return invalid(format!("the kq nonlinearity has growth exponent 1, got {t}"));
                }
            }
            (inward, Nonlinearity::kq(opts.reg)?)
        }
        Preset::PowerDrift => (inward, Nonlinearity::power(opts.theta.unwrap_or(1.0), opts.reg)?),
    };
    let coefficients = CoefficientSet {
        diffusivity: Diffusivity::identity(&grid),
        drift: opts.drift.unwrap_or(default_drift),
        source: opts.source.unwrap_or(SourceField::Zero),
        u0,
    };
    ProblemSpec::new(grid, coefficients, nonlinearity, opts.horizon, opts.alpha, opts.beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn g_eval_examples() {
        let g = Nonlinearity::power(1.0, Some(10.0)).unwrap();
        assert_relative_eq!(g.eval(1.0), 1.0 / 1.1, max_relative = 1e-15);
        assert_eq!(g.eval(0.0), 0.0);
        assert!(g.eval(100.0) > 9.9 && g.eval(100.0) < 10.0);
        let h = Nonlinearity::power(0.5, None).unwrap();
        assert_relative_eq!(h.eval(4.0), 8.0, max_relative = 1e-15);
        assert_eq!(Nonlinearity::power(0.0, Some(5.0)).unwrap().eval(0.0), 0.0);
    }

    #[test]
    fn kq_form() {
        let g = Nonlinearity::kq(None).unwrap();
        assert_eq!(g.eval(2.0), 6.0);
        assert_eq!(g.eval(-2.0), -6.0);
        let gn = Nonlinearity::kq(Some(4.0)).unwrap();
        assert_relative_eq!(gn.eval(2.0), 6.0 / 2.0);
        assert!(gn.eval(1e6) < 4.0 + 1e-3);
    }

    #[test]
    fn rejects_invalid_nonlinearities() {
        assert!(Nonlinearity::power(-0.1, None).is_err());
        assert!(Nonlinearity::power(1.0, Some(0.0)).is_err());
        assert!(Nonlinearity::kq(Some(f64::NAN)).is_err());
    }

    #[test]
    fn derivative_bound_matches_finite_differences() {
        for &(theta, reg) in &[(0.0, None), (1.0, None), (0.5, Some(10.0)), (1.0, Some(3.0)), (2.0, Some(50.0))] {
            let g = Nonlinearity::power(theta, reg).unwrap();
            for &u in &[0.1, 1.0, 2.5, 10.0, 100.0] {
                let bound = g.derivative_bound(u);
                let h = 1e-6;
                let numeric = (0..=2000)
                    .map(|k| u * k as f64 / 2000.0)
                    .map(|s| ((g.eval(s + h) - g.eval((s - h).max(0.0))) / (s + h - (s - h).max(0.0))).abs())
                    .fold(0.0, f64::max);
                assert!(
                    numeric <= bound * (1.0 + 1e-4),
                    "theta {theta} reg {reg:?} u {u}: {numeric} > {bound}"
                );
                assert!(numeric >= bound * (1.0 - 1e-2), "bound not tight: {numeric} vs {bound}");
            }
        }
        let kq = Nonlinearity::kq(Some(100.0)).unwrap();
        for s in [0.0, 0.5, 3.0, 40.0, 400.0] {
            let d = (kq.eval(s + 1e-6) - kq.eval(s - 1e-6)) / 2e-6;
            assert!(d.abs() <= kq.derivative_bound(s) + 1e-6);
        }
    }

    fn grid2() -> Arc<Grid> {
        Arc::new(Grid::new(2, &[2.0, 1.0], &[8, 4]).unwrap())
    }

    #[test]
    fn presets_build() {
        let g = Arc::new(Grid::unit(2, 64).unwrap());
        let heat = make_problem(
            Preset::Heat,
            g,
            PresetOptions {
                horizon: 0.1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(heat.drift().is_zero());
        assert_eq!(heat.diffusivity().min_entry(2), 1.0);

        let g = Arc::new(Grid::new(3, &[10.0; 3], &[12; 3]).unwrap());
        let kq = make_problem(Preset::Kq, g.clone(), PresetOptions::default()).unwrap();
        assert_eq!(kq.nonlinearity().form(), NonlinearForm::Kq);
        assert_relative_eq!(kq.u0().integral(), 1.0, max_relative = 1e-12);
        let e = kq.drift().cell_values(&g, 0.0);
        let x = g.cell_center(0);
        for a in 0..3 {
            assert_relative_eq!(e[0][a], x[a] - 5.0);
        }
        // E points away from the centre, so transport points towards it
        let vel = kq.drift().face_velocities(&g, 0.0);
        assert!(vel.low(&g, 0, 0) > 0.0);
        assert!("nope".parse::<Preset>().is_err());
    }

    #[test]
    fn ellipticity_is_enforced() {
        let g = grid2();
        let u0 = Field::zeros(g.clone());
        let mut entries = vec![[1.0; 3]; g.n_cells()];
        entries[3][1] = 0.0;
        let coeffs = CoefficientSet {
            diffusivity: Diffusivity::from_entries(entries),
            drift: DriftField::Zero,
            source: SourceField::Zero,
            u0,
        };
        let err = ProblemSpec::new(g, coeffs, Nonlinearity::power(1.0, None).unwrap(), 1.0, 0.5, 2.0);
        assert!(matches!(err, Err(Error::Ellipticity(_))));
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let g = grid2();
        let other = Arc::new(Grid::unit(1, 5).unwrap());
        let coeffs = CoefficientSet {
            diffusivity: Diffusivity::identity(&g),
            drift: DriftField::Zero,
            source: SourceField::Zero,
            u0: Field::zeros(other),
        };
        assert!(ProblemSpec::new(g, coeffs, Nonlinearity::power(1.0, None).unwrap(), 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn tabulated_drift_averages_on_faces() {
        let g = Arc::new(Grid::unit(1, 3).unwrap());
        let d = DriftField::Tabulated(vec![[1.0, 0.0, 0.0], [3.0, 0.0, 0.0], [5.0, 0.0, 0.0]]);
        let v = d.face_velocities(&g, 0.0);
        assert_eq!(v.axes[0], vec![-1.0, -2.0, -4.0, -5.0]);
    }

    #[test]
    fn source_is_truncated() {
        let g = Arc::new(Grid::unit(1, 4).unwrap());
        let s = SourceField::Constant(50.0);
        assert!(s.cell_values(&g, 0.0, Some(10.0)).iter().all(|&v| v == 10.0));
        assert!(s.cell_values(&g, 0.0, None).iter().all(|&v| v == 50.0));
    }

    proptest! {
        #[test]
        fn g_is_odd(s in -1e3f64..1e3, theta in 0.0f64..3.0, n in 1.0f64..1e6) {
            let g = Nonlinearity::power(theta, Some(n)).unwrap();
            prop_assert_eq!(g.eval(-s), -g.eval(s));
            let kq = Nonlinearity::kq(Some(n)).unwrap();
            prop_assert_eq!(kq.eval(-s), -kq.eval(s));
        }

        #[test]
        fn g_is_bounded(s in -1e3f64..1e3, theta in 0.0f64..3.0, n in 1.0f64..1e6) {
            let g = Nonlinearity::power(theta, Some(n)).unwrap();
            let v = g.eval(s).abs();
            prop_assert!(v <= n * (1.0 + 1e-15));
            prop_assert!(v <= s.abs().powf(theta + 1.0) * (1.0 + 1e-15));
        }

        #[test]
        fn g_converges_monotonically(s in -20.0f64..20.0, theta in 0.0f64..2.0) {
            let h = Nonlinearity::power(theta, None).unwrap().unregularized(s);
            let mut prev = 0.0;
            for k in 1..=6 {
                let n = 10f64.powi(k);
                let g = Nonlinearity::power(theta, Some(n)).unwrap().eval(s);
                prop_assert!(g.abs() >= prev);
                prev = g.abs();
                let bound = s.abs().powf(2.0 * (theta + 1.0)) / n;
                // rounding of the two evaluations contributes a few ulps of |h|
                prop_assert!((g - h).abs() <= bound * (1.0 + 1e-12) + 4.0 * f64::EPSILON * h.abs());
            }
        }
    }
}
