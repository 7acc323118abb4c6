//! Uniform Cartesian grids, cell-averaged fields and the integral quantities
//! built on them: L^m integrals, truncations, superlevel-set measures and
//! Marcinkiewicz (weak-L^p) norms.
//!
//! Fields hold one value per cell and are interpreted as piecewise constant,
//! so every integral below is an exact finite sum. Time series are
//! piecewise constant in time as well: snapshot `k ≥ 1` stands for the
//! interval `(t_{k-1}, t_k]` and snapshot 0 carries zero weight.

use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::par::Exec;

pub const MAX_DIM: usize = 3;

/// Box `[0, L_0) × … × [0, L_{N-1})` split into `cells[a]` equal cells per axis.
///
/// Cells are ordered lexicographically with axis 0 slowest. Unused axes
/// (beyond `dim`) are stored as a single cell of unit width so the index
/// arithmetic stays branch free.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    extents: [f64; MAX_DIM],
    cells: [usize; MAX_DIM],
    spacing: [f64; MAX_DIM],
    strides: [usize; MAX_DIM],
    n_cells: usize,
    cell_volume: f64,
}

impl Grid {
    pub fn new(dim: usize, extents: &[f64], cells: &[usize]) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if extents.len() != dim || cells.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} extents and cell counts, got {} and {}",
                extents.len(),
                cells.len()
            )));
        }
        let mut ext = [1.0; MAX_DIM];
        let mut cnt = [1usize; MAX_DIM];
        let mut spacing = [1.0; MAX_DIM];
        for a in 0..dim {
            if !(extents[a].is_finite() && extents[a] > 0.0) {
                return Err(Error::InvalidGrid(format!("extent {} on axis {a} must be positive", extents[a])));
            }
            if cells[a] < 3 {
                return Err(Error::InvalidGrid(format!("axis {a} has {} cells, need at least 3", cells[a])));
            }
            ext[a] = extents[a];
            cnt[a] = cells[a];
            spacing[a] = extents[a] / cells[a] as f64;
        }
        let mut strides = [1usize; MAX_DIM];
        for a in (0..MAX_DIM - 1).rev() {
            strides[a] = strides[a + 1] * cnt[a + 1];
        }
        let n_cells = cnt.iter().product();
        let cell_volume = spacing[..dim].iter().product();
        Ok(Grid {
            dim,
            extents: ext,
            cells: cnt,
            spacing,
            strides,
            n_cells,
            cell_volume,
        })
    }

    /// Unit cube `[0,1)^dim` with `n` cells per axis.
    pub fn unit(dim: usize, n: usize) -> Result<Self> {
        Grid::new(dim, &vec![1.0; dim], &vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents[..self.dim]
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    /// `∏ L_a`.
    pub fn volume(&self) -> f64 {
        self.extents().iter().product()
    }

    /// Area of a cell face normal to `axis`.
    pub fn face_area(&self, axis: usize) -> f64 {
        self.cell_volume / self.spacing[axis]
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    pub fn coords(&self, idx: usize) -> [usize; MAX_DIM] {
        let mut c = [0; MAX_DIM];
        let mut rem = idx;
        for a in 0..MAX_DIM {
            c[a] = rem / self.strides[a];
            rem %= self.strides[a];
        }
        c
    }

    pub fn index(&self, coords: [usize; MAX_DIM]) -> usize {
        coords.iter().zip(&self.strides).map(|(c, s)| c * s).sum()
    }

    /// Cell centre; unused axes report 0.
    pub fn cell_center(&self, idx: usize) -> [f64; MAX_DIM] {
        let c = self.coords(idx);
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.dim {
            x[a] = (c[a] as f64 + 0.5) * self.spacing[a];
        }
        x
    }

    /// Centre of the face of cell `idx` on the low side of `axis`.
    pub fn lower_face_center(&self, idx: usize, axis: usize) -> [f64; MAX_DIM] {
        let mut x = self.cell_center(idx);
        x[axis] -= 0.5 * self.spacing[axis];
        x
    }

    /// Neighbour across the low (`upper = false`) or high face along `axis`.
    #[inline]
    pub fn neighbor(&self, idx: usize, axis: usize, upper: bool) -> Option<usize> {
        let c = (idx / self.strides[axis]) % self.cells[axis];
        if upper {
            (c + 1 < self.cells[axis]).then(|| idx + self.strides[axis])
        } else {
            (c > 0).then(|| idx - self.strides[axis])
        }
    }

    /// True when the cell touches ∂Ω.
    pub fn is_boundary_cell(&self, idx: usize) -> bool {
        let c = self.coords(idx);
        (0..self.dim).any(|a| c[a] == 0 || c[a] + 1 == self.cells[a])
    }

    /// Number of faces normal to `axis` (including both boundary layers).
    pub fn face_count(&self, axis: usize) -> usize {
        self.n_cells / self.cells[axis] * (self.cells[axis] + 1)
    }

    /// Face-grid index of the low face of cell `idx` along `axis`; the high
    /// face is `low_face + stride(axis)`.
    #[inline]
    pub fn low_face(&self, idx: usize, axis: usize) -> usize {
        let s = self.strides[axis];
        idx + idx / (s * self.cells[axis]) * s
    }

    /// Centre of face `fid` in the face grid normal to `axis`.
    pub fn face_center(&self, axis: usize, fid: usize) -> [f64; MAX_DIM] {
        let mut fs = self.strides;
        for b in 0..axis {
            fs[b] = self.strides[b] / self.cells[axis] * (self.cells[axis] + 1);
        }
        let mut rem = fid;
        let mut x = [0.0; MAX_DIM];
        for b in 0..MAX_DIM {
            let c = rem / fs[b];
            rem %= fs[b];
            if b < self.dim {
                x[b] = if b == axis {
                    c as f64 * self.spacing[b]
                } else {
                    (c as f64 + 0.5) * self.spacing[b]
                };
            }
        }
        x
    }

    /// Cells on the low and high side of face `fid` normal to `axis`.
    pub fn face_cells(&self, axis: usize, fid: usize) -> (Option<usize>, Option<usize>) {
        let s = self.strides[axis];
        let line = s * (self.cells[axis] + 1);
        let outer = fid / line;
        let within = fid % line;
        let c = within / s;
        let high_idx = outer * s * self.cells[axis] + within;
        let high = (c < self.cells[axis]).then_some(high_idx);
        let low = (c > 0).then(|| high_idx - s);
        (low, high)
    }

    pub fn center(&self) -> [f64; MAX_DIM] {
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.dim {
            x[a] = 0.5 * self.extents[a];
        }
        x
    }
}

/// `(T_k(s), G_k(s))` with `T_k(s) = max(-k, min(s, k))` and `G_k = s - T_k`.
pub fn truncation_pair(s: f64, k: f64) -> Result<(f64, f64)> {
    if !(k > 0.0) {
        return invalid(format!("truncation level must be positive, got {k}"));
    }
    let t = s.clamp(-k, k);
    Ok((t, s - t))
}

#[inline]
pub(crate) fn abs_pow(x: f64, m: f64) -> f64 {
    let a = x.abs();
    if m == 1.0 {
        a
    } else if m == 2.0 {
        a * a
    } else {
        a.powf(m)
    }
}

/// Cell-averaged scalar field on a shared grid.
#[derive(Clone, Debug)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
    blown_up: bool,
}

impl Field {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid with {} cells",
                values.len(),
                grid.n_cells()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite value {} in cell {i}", values[i]));
        }
        Ok(Field {
            grid,
            values,
            blown_up: false,
        })
    }

    /// A field produced past the blow-up cap; values may be non-finite.
    pub fn blown_up(grid: Arc<Grid>, values: Vec<f64>) -> Self {
        Field {
            grid,
            values,
            blown_up: true,
        }
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.n_cells();
        Field {
            grid,
            values: vec![0.0; n],
            blown_up: false,
        }
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Result<Self> {
        let n = grid.n_cells();
        Field::new(grid, vec![c; n])
    }

    /// Sample a closed form at cell centres.
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64; MAX_DIM]) -> f64) -> Result<Self> {
        let values = (0..grid.n_cells()).map(|i| f(&grid.cell_center(i))).collect();
        Field::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_blown_up(&self) -> bool {
        self.blown_up
    }

    pub(crate) fn usable(&self) -> Result<()> {
        if self.blown_up {
            Err(Error::BlownUpField)
        } else {
            Ok(())
        }
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    /// `Σ_i |u_i|^m · |cell|`.
    pub fn integrate_power(&self, m: f64) -> Result<f64> {
        self.integrate_power_with(m, Exec::default())
    }

    pub fn integrate_power_with(&self, m: f64, exec: Exec) -> Result<f64> {
        if !(m >= 1.0) {
            return invalid(format!("integrability exponent must be >= 1, got {m}"));
        }
        self.usable()?;
        let v = &self.values;
        Ok(exec.sum(v.len(), |i| abs_pow(v[i], m)) * self.grid.cell_volume())
    }

    pub fn lp_norm(&self, m: f64) -> Result<f64> {
        Ok(self.integrate_power(m)?.powf(1.0 / m))
    }

    pub fn l1_norm(&self) -> Result<f64> {
        self.integrate_power(1.0)
    }

    pub fn linf_norm(&self) -> Result<f64> {
        self.usable()?;
        Ok(self.values.iter().fold(0.0, |m, v| m.max(v.abs())))
    }

    /// Signed integral `∫ u`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Element-wise `(T_k(u), G_k(u))`.
    pub fn truncation_pair(&self, k: f64) -> Result<(Field, Field)> {
        let mut t = Vec::with_capacity(self.values.len());
        let mut g = Vec::with_capacity(self.values.len());
        for &s in &self.values {
            let (a, b) = truncation_pair(s, k)?;
            t.push(a);
            g.push(b);
        }
        Ok((Field::new(self.grid.clone(), t)?, Field::new(self.grid.clone(), g)?))
    }

    /// `|{x : |u(x)| > k}|`.
    pub fn superlevel_measure(&self, k: f64) -> Result<f64> {
        if !(k > 0.0) {
            return invalid(format!("superlevel threshold must be positive, got {k}"));
        }
        self.usable()?;
        let count = self.values.iter().filter(|v| v.abs() > k).count();
        Ok(count as f64 * self.grid.cell_volume())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Field> {
        Field::new(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch("fields live on different grids".into()));
        }
        let v = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Field::new(self.grid.clone(), v)
    }
}

/// Time-indexed snapshots sharing one grid, starting at `t = 0`.
#[derive(Clone, Debug)]
pub struct SpaceTimeSeries {
    times: Vec<f64>,
    snapshots: Vec<Field>,
}

impl SpaceTimeSeries {
    pub fn new(initial: Field) -> Self {
        SpaceTimeSeries {
            times: vec![0.0],
            snapshots: vec![initial],
        }
    }

    pub fn from_parts(times: Vec<f64>, snapshots: Vec<Field>) -> Result<Self> {
        if times.is_empty() || times.len() != snapshots.len() {
            return invalid("series needs one time per snapshot and at least one snapshot");
        }
        if times[0] != 0.0 {
            return invalid(format!("series must start at t = 0, got {}", times[0]));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("series times must be strictly increasing");
        }
        if snapshots.iter().any(|s| !s.same_grid(&snapshots[0])) {
            return Err(Error::GridMismatch("snapshots on different grids".into()));
        }
        Ok(SpaceTimeSeries { times, snapshots })
    }

    pub fn push(&mut self, t: f64, field: Field) -> Result<()> {
        let last = *self.times.last().expect("series is never empty");
        if !(t > last) {
            return invalid(format!("time {t} does not advance past {last}"));
        }
        if !field.same_grid(&self.snapshots[0]) {
            return Err(Error::GridMismatch("snapshot on a different grid".into()));
        }
        self.times.push(t);
        self.snapshots.push(field);
        Ok(())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn snapshots(&self) -> &[Field] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.snapshots[0].grid()
    }

    pub fn last(&self) -> &Field {
        self.snapshots.last().expect("series is never empty")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("series is never empty")
    }

    /// Duration represented by each snapshot: 0 for the first, `t_k - t_{k-1}` after.
    pub fn time_weights(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.times.len());
        w.push(0.0);
        w.extend(self.times.windows(2).map(|p| p[1] - p[0]));
        w
    }

    fn check(&self) -> Result<()> {
        self.snapshots.iter().try_for_each(Field::usable)
    }

    /// Space-time measure of `{|u| > k}`.
    pub fn superlevel_measure(&self, k: f64) -> Result<f64> {
        self.check()?;
        let w = self.time_weights();
        let mut total = 0.0;
        for (s, dt) in self.snapshots.iter().zip(w) {
            if dt > 0.0 {
                total += dt * s.superlevel_measure(k)?;
            }
        }
        Ok(total)
    }

    /// `(∫∫ |u|^p)^{1/p}` over the space-time cylinder.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        self.check()?;
        let w = self.time_weights();
        let mut total = 0.0;
        for (s, dt) in self.snapshots.iter().zip(w) {
            if dt > 0.0 {
                total += dt * s.integrate_power(p)?;
            }
        }
        Ok(total.powf(1.0 / p))
    }

    /// `sup_{k>0} k · λ(k)^{1/p}` with `λ(k) = |{|u| > k}|`, evaluated exactly.
    pub fn marcinkiewicz_norm(&self, p: f64) -> Result<f64> {
        if !(p > 1.0) {
            return invalid(format!("Marcinkiewicz exponent must exceed 1, got {p}"));
        }
        self.check()?;
        let vol = self.grid().cell_volume();
        let mut samples = Vec::new();
        for (s, dt) in self.snapshots.iter().zip(self.time_weights()) {
            if dt > 0.0 {
                samples.extend(s.values().iter().map(|v| (v.abs(), dt * vol)));
            }
        }
        Ok(marcinkiewicz_from_samples(samples, p))
    }
}

/// Weak-L^p norm of a piecewise constant function given as `(|value|, measure)` pairs.
///
/// `λ` is a right-continuous step function, so on `[v_{j}, v_{j+1})` the
/// product `k^p λ(k)` increases towards `v_{j+1}^p · |{|f| ≥ v_{j+1}}|`;
/// the supremum is the largest of these left limits.
pub fn marcinkiewicz_from_samples(mut samples: Vec<(f64, f64)>, p: f64) -> f64 {
    samples.retain(|&(v, w)| v > 0.0 && w > 0.0);
    samples.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best: f64 = 0.0;
    let mut cumulative = 0.0;
    let mut i = 0;
    while i < samples.len() {
        let level = samples[i].0;
        while i < samples.len() && samples[i].0 == level {
            cumulative += samples[i].1;
            i += 1;
        }
        best = best.max(level.powf(p) * cumulative);
    }
    best.powf(1.0 / p)
}
