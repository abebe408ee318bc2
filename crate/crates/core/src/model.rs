//! System descriptions and grid-sampled fields shared by every other module.
//!
//! Coefficients are stored as samples on a uniform grid of `[0, 1]` and
//! evaluated between nodes by linear interpolation. Kernel fields live either
//! on the triangle `0 <= zeta <= z <= 1` ([`TriKernelField`]) or on the full
//! unit square ([`SqKernelField`]).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid on `[0, 1]` with `n_cells + 1` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid1D {
    n_cells: usize,
}

impl Grid1D {
    pub fn new(n_cells: usize) -> Result<Self> {
        if n_cells < 2 {
            return Err(Error::InvalidSystem(format!(
                "grid needs at least 2 cells, got {n_cells}"
            )));
        }
        Ok(Self { n_cells })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_nodes(&self) -> usize {
        self.n_cells + 1
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n_cells as f64
    }

    pub fn z(&self, k: usize) -> f64 {
        if k == self.n_cells {
            1.0
        } else {
            k as f64 / self.n_cells as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|k| self.z(k)).collect()
    }

    /// Cell index `p` and local coordinate `t` in `[0, 1]` such that
    /// `z = z_p + t h`. Points outside `[0, 1]` are clamped.
    pub fn locate(&self, z: f64) -> (usize, f64) {
        let s = (z * self.n_cells as f64).clamp(0.0, self.n_cells as f64);
        let p = (s.floor() as usize).min(self.n_cells - 1);
        (p, (s - p as f64).clamp(0.0, 1.0))
    }

    /// Composite trapezoid weights over all nodes of `[0, 1]`.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        trapezoid_weights(self.n_nodes(), self.h())
    }

    /// Doubles the number of cells.
    pub fn refined(&self) -> Self {
        Self {
            n_cells: self.n_cells * 2,
        }
    }
}

/// Trapezoid weights for `count` equally spaced samples with spacing `h`.
/// A single sample integrates over an empty interval.
pub fn trapezoid_weights(count: usize, h: f64) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => {
            let mut w = vec![h; count];
            w[0] = 0.5 * h;
            w[count - 1] = 0.5 * h;
            w
        }
    }
}

/// Linear interpolation of node samples `values` on `grid`.
pub fn interp_nodes(grid: &Grid1D, values: &[f64], z: f64) -> f64 {
    let (p, t) = grid.locate(z);
    values[p] * (1.0 - t) + values[p + 1] * t
}

/// Matrix-valued coefficient sampled at every grid node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixField1D {
    grid: Grid1D,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatrixField1D {
    pub fn zeros(grid: Grid1D, rows: usize, cols: usize) -> Self {
        Self {
            grid,
            rows,
            cols,
            data: vec![0.0; grid.n_nodes() * rows * cols],
        }
    }

    pub fn constant(grid: Grid1D, value: &DMatrix<f64>) -> Self {
        Self::from_fn(grid, value.nrows(), value.ncols(), |_| value.clone())
    }

    pub fn from_fn(
        grid: Grid1D,
        rows: usize,
        cols: usize,
        mut f: impl FnMut(f64) -> DMatrix<f64>,
    ) -> Self {
        let mut field = Self::zeros(grid, rows, cols);
        for k in 0..grid.n_nodes() {
            let m = f(grid.z(k));
            assert_eq!(m.shape(), (rows, cols), "from_fn produced a wrong shape");
            field.set_node(k, &m);
        }
        field
    }

    pub fn from_nodes(grid: Grid1D, nodes: &[DMatrix<f64>]) -> Result<Self> {
        if nodes.len() != grid.n_nodes() {
            return Err(Error::Shape(format!(
                "expected {} node matrices, got {}",
                grid.n_nodes(),
                nodes.len()
            )));
        }
        let (rows, cols) = nodes.first().map(|m| m.shape()).unwrap_or((0, 0));
        if nodes.iter().any(|m| m.shape() != (rows, cols)) {
            return Err(Error::Shape("node matrices differ in shape".into()));
        }
        let mut field = Self::zeros(grid, rows, cols);
        for (k, m) in nodes.iter().enumerate() {
            field.set_node(k, m);
        }
        Ok(field)
    }

    /// Diagonal field with the given per-component node samples.
    pub fn diagonal(grid: Grid1D, components: &[Vec<f64>]) -> Result<Self> {
        let n = components.len();
        let mut field = Self::zeros(grid, n, n);
        for (i, values) in components.iter().enumerate() {
            if values.len() != grid.n_nodes() {
                return Err(Error::Shape(format!(
                    "component {i} has {} samples, grid has {} nodes",
                    values.len(),
                    grid.n_nodes()
                )));
            }
            for (k, &v) in values.iter().enumerate() {
                field.set(k, i, i, v);
            }
        }
        Ok(field)
    }

    pub fn grid(&self) -> Grid1D {
        self.grid
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    fn offset(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.rows + i) * self.cols + j
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[self.offset(k, i, j)]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        let o = self.offset(k, i, j);
        self.data[o] = v;
    }

    pub fn at(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(k, i, j))
    }

    pub fn set_node(&mut self, k: usize, m: &DMatrix<f64>) {
        for i in 0..self.rows {
            for j in 0..self.cols {
                self.set(k, i, j, m[(i, j)]);
            }
        }
    }

    /// Node samples of entry `(i, j)`.
    pub fn entry(&self, i: usize, j: usize) -> Vec<f64> {
        (0..self.grid.n_nodes())
            .map(|k| self.get(k, i, j))
            .collect()
    }

    pub fn interp_entry(&self, z: f64, i: usize, j: usize) -> f64 {
        let (p, t) = self.grid.locate(z);
        self.get(p, i, j) * (1.0 - t) + self.get(p + 1, i, j) * t
    }

    pub fn interp(&self, z: f64) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.interp_entry(z, i, j))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Nodewise map producing a field of possibly different shape.
    pub fn map_nodes(&self, mut f: impl FnMut(usize, DMatrix<f64>) -> DMatrix<f64>) -> Self {
        let first = f(0, self.at(0));
        let mut out = Self::zeros(self.grid, first.nrows(), first.ncols());
        out.set_node(0, &first);
        for k in 1..self.grid.n_nodes() {
            out.set_node(k, &f(k, self.at(k)));
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// True when every entry on or above the diagonal is exactly zero.
    pub fn is_strictly_lower(&self) -> bool {
        (0..self.grid.n_nodes())
            .all(|k| (0..self.rows).all(|i| (i..self.cols).all(|j| self.get(k, i, j) == 0.0)))
    }

    /// True when every entry above the diagonal is exactly zero.
    pub fn is_lower(&self) -> bool {
        (0..self.grid.n_nodes())
            .all(|k| (0..self.rows).all(|i| (i + 1..self.cols).all(|j| self.get(k, i, j) == 0.0)))
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }
}

/// Matrix kernel sampled on the triangle `0 <= zeta <= z <= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriKernelField {
    grid: Grid1D,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Linear index of triangle node `(k, l)`, `l <= k`.
#[inline]
pub fn tri_index(k: usize, l: usize) -> usize {
    debug_assert!(l <= k);
    k * (k + 1) / 2 + l
}

/// Number of triangle nodes on a grid.
pub fn tri_len(grid: &Grid1D) -> usize {
    let n = grid.n_nodes();
    n * (n + 1) / 2
}

impl TriKernelField {
    pub fn zeros(grid: Grid1D, rows: usize, cols: usize) -> Self {
        Self {
            grid,
            rows,
            cols,
            data: vec![0.0; tri_len(&grid) * rows * cols],
        }
    }

    pub fn grid(&self) -> Grid1D {
        self.grid
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    fn offset(&self, k: usize, l: usize, i: usize, j: usize) -> usize {
        (tri_index(k, l) * self.rows + i) * self.cols + j
    }

    /// Entry `(i, j)` at node `(z_k, zeta_l)`; `l <= k` is required.
    #[inline]
    pub fn get(&self, k: usize, l: usize, i: usize, j: usize) -> f64 {
        assert!(l <= k, "sample ({k}, {l}) lies outside the triangle");
        self.data[self.offset(k, l, i, j)]
    }

    #[inline]
    pub fn set(&mut self, k: usize, l: usize, i: usize, j: usize, v: f64) {
        assert!(l <= k, "sample ({k}, {l}) lies outside the triangle");
        let o = self.offset(k, l, i, j);
        self.data[o] = v;
    }

    pub fn at(&self, k: usize, l: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(k, l, i, j))
    }

    /// Entry `(i, j)` over all triangle nodes in [`tri_index`] order.
    pub fn entry(&self, i: usize, j: usize) -> Vec<f64> {
        let stride = self.rows * self.cols;
        self.data
            .iter()
            .skip(i * self.cols + j)
            .step_by(stride)
            .copied()
            .collect()
    }

    pub fn set_entry(&mut self, i: usize, j: usize, values: &[f64]) {
        let stride = self.rows * self.cols;
        assert_eq!(values.len(), tri_len(&self.grid));
        for (idx, &v) in values.iter().enumerate() {
            self.data[idx * stride + i * self.cols + j] = v;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Matrix kernel sampled on the full unit square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqKernelField {
    grid: Grid1D,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SqKernelField {
    pub fn zeros(grid: Grid1D, rows: usize, cols: usize) -> Self {
        let n = grid.n_nodes();
        Self {
            grid,
            rows,
            cols,
            data: vec![0.0; n * n * rows * cols],
        }
    }

    /// Embeds a triangle kernel; samples with `zeta > z` are zero.
    pub fn from_tri(tri: &TriKernelField) -> Self {
        let grid = tri.grid();
        let mut sq = Self::zeros(grid, tri.rows(), tri.cols());
        for k in 0..grid.n_nodes() {
            for l in 0..=k {
                for i in 0..tri.rows() {
                    for j in 0..tri.cols() {
                        sq.set(k, l, i, j, tri.get(k, l, i, j));
                    }
                }
            }
        }
        sq
    }

    pub fn grid(&self) -> Grid1D {
        self.grid
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    fn offset(&self, k: usize, l: usize, i: usize, j: usize) -> usize {
        ((k * self.grid.n_nodes() + l) * self.rows + i) * self.cols + j
    }

    #[inline]
    pub fn get(&self, k: usize, l: usize, i: usize, j: usize) -> f64 {
        self.data[self.offset(k, l, i, j)]
    }

    #[inline]
    pub fn set(&mut self, k: usize, l: usize, i: usize, j: usize, v: f64) {
        let o = self.offset(k, l, i, j);
        self.data[o] = v;
    }

    pub fn at(&self, k: usize, l: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(k, l, i, j))
    }

    /// Samples along `zeta` at fixed `z_k`, as a field in `zeta`.
    pub fn row_field(&self, k: usize) -> MatrixField1D {
        let mut f = MatrixField1D::zeros(self.grid, self.rows, self.cols);
        for l in 0..self.grid.n_nodes() {
            f.set_node(l, &self.at(k, l));
        }
        f
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Heterodirectional hyperbolic system with `n_minus` components travelling
/// towards `z = 0` and `n_plus` components travelling towards `z = 1`.
///
/// Shapes are checked by [`HyperbolicSystem::new`]; the remaining invariants
/// are reported by [`validate_system`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicSystem {
    pub n_minus: usize,
    pub n_plus: usize,
    pub lambda_minus: MatrixField1D,
    pub lambda_plus: MatrixField1D,
    pub a_mm: MatrixField1D,
    pub a_mp: MatrixField1D,
    pub a_pm: MatrixField1D,
    pub a_pp: MatrixField1D,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl HyperbolicSystem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        lambda_minus: MatrixField1D,
        lambda_plus: MatrixField1D,
        a_mm: MatrixField1D,
        a_mp: MatrixField1D,
        a_pm: MatrixField1D,
        a_pp: MatrixField1D,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self> {
        let sys = Self {
            n_minus: lambda_minus.rows(),
            n_plus: lambda_plus.rows(),
            lambda_minus,
            lambda_plus,
            a_mm,
            a_mp,
            a_pm,
            a_pp,
            q,
            r,
        };
        sys.check_shapes()?;
        Ok(sys)
    }

    /// System with constant coefficients; velocities are given per component.
    #[allow(clippy::too_many_arguments)]
    pub fn constant(
        grid: Grid1D,
        lambda_minus: &[f64],
        lambda_plus: &[f64],
        a_mm: DMatrix<f64>,
        a_mp: DMatrix<f64>,
        a_pm: DMatrix<f64>,
        a_pp: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self> {
        let diag = |v: &[f64]| {
            MatrixField1D::constant(
                grid,
                &DMatrix::from_diagonal(&DVector::from_column_slice(v)),
            )
        };
        Self::new(
            diag(lambda_minus),
            diag(lambda_plus),
            MatrixField1D::constant(grid, &a_mm),
            MatrixField1D::constant(grid, &a_mp),
            MatrixField1D::constant(grid, &a_pm),
            MatrixField1D::constant(grid, &a_pp),
            q,
            r,
        )
    }

    pub fn grid(&self) -> Grid1D {
        self.lambda_minus.grid()
    }

    pub fn delta_n(&self) -> usize {
        self.n_minus.saturating_sub(self.n_plus)
    }

    /// Node samples of the velocity of x^- component `i`.
    pub fn velocity_minus(&self, i: usize) -> Vec<f64> {
        self.lambda_minus.entry(i, i)
    }

    /// Node samples of the velocity of x^+ component `i`.
    pub fn velocity_plus(&self, i: usize) -> Vec<f64> {
        self.lambda_plus.entry(i, i)
    }

    pub fn max_velocity(&self) -> f64 {
        self.lambda_minus.max_abs().max(self.lambda_plus.max_abs())
    }

    pub fn max_coupling(&self) -> f64 {
        [&self.a_mm, &self.a_mp, &self.a_pm, &self.a_pp]
            .iter()
            .fold(0.0, |m, a| m.max(a.max_abs()))
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (nm, np) = (self.n_minus, self.n_plus);
        let grid = self.grid();
        let expect = |name: &str, f: &MatrixField1D, shape: (usize, usize)| -> Result<()> {
            if f.shape() != shape {
                return Err(Error::Shape(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    f.shape()
                )));
            }
            if f.grid() != grid {
                return Err(Error::Shape(format!("{name} lives on a different grid")));
            }
            Ok(())
        };
        if nm == 0 || np == 0 {
            return Err(Error::Shape("n_minus and n_plus must be positive".into()));
        }
        expect("lambda_minus", &self.lambda_minus, (nm, nm))?;
        expect("lambda_plus", &self.lambda_plus, (np, np))?;
        expect("A--", &self.a_mm, (nm, nm))?;
        expect("A-+", &self.a_mp, (nm, np))?;
        expect("A+-", &self.a_pm, (np, nm))?;
        expect("A++", &self.a_pp, (np, np))?;
        if self.q.shape() != (np, nm) {
            return Err(Error::Shape(format!(
                "Q has shape {:?}, expected {:?}",
                self.q.shape(),
                (np, nm)
            )));
        }
        if self.r.shape() != (nm, np) {
            return Err(Error::Shape(format!(
                "R has shape {:?}, expected {:?}",
                self.r.shape(),
                (nm, np)
            )));
        }
        Ok(())
    }

    /// Same system with every in-domain coupling set to zero.
    pub fn without_coupling(&self) -> Self {
        let grid = self.grid();
        let (nm, np) = (self.n_minus, self.n_plus);
        Self {
            a_mm: MatrixField1D::zeros(grid, nm, nm),
            a_mp: MatrixField1D::zeros(grid, nm, np),
            a_pm: MatrixField1D::zeros(grid, np, nm),
            a_pp: MatrixField1D::zeros(grid, np, np),
            ..self.clone()
        }
    }
}

/// Transport system without in-domain coupling, interconnected with an ODE
/// at the unactuated boundary `z = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeOdeSystem {
    pub base: HyperbolicSystem,
    pub f: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl PdeOdeSystem {
    pub fn new(
        base: HyperbolicSystem,
        f: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
    ) -> Result<Self> {
        let sys = Self { base, f, b, c };
        sys.check_shapes()?;
        Ok(sys)
    }

    pub fn n0(&self) -> usize {
        self.f.nrows()
    }

    pub fn check_shapes(&self) -> Result<()> {
        self.base.check_shapes()?;
        let n0 = self.f.nrows();
        if n0 == 0 || self.f.ncols() != n0 {
            return Err(Error::Shape("F must be square and non-empty".into()));
        }
        if self.b.shape() != (n0, self.base.n_minus) {
            return Err(Error::Shape(format!(
                "B has shape {:?}, expected {:?}",
                self.b.shape(),
                (n0, self.base.n_minus)
            )));
        }
        if self.c.shape() != (self.base.n_plus, n0) {
            return Err(Error::Shape(format!(
                "C has shape {:?}, expected {:?}",
                self.c.shape(),
                (self.base.n_plus, n0)
            )));
        }
        if self.base.max_coupling() != 0.0 {
            return Err(Error::InvalidSystem(
                "PDE-ODE base system must not carry in-domain coupling".into(),
            ));
        }
        Ok(())
    }
}

/// Grid-sampled state at one time instant. Column `k` holds node `z_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSnapshot {
    pub t: f64,
    pub x_minus: DMatrix<f64>,
    pub x_plus: DMatrix<f64>,
    pub xi: Option<DVector<f64>>,
}

impl StateSnapshot {
    pub fn zeros(grid: &Grid1D, n_minus: usize, n_plus: usize, n0: Option<usize>) -> Self {
        Self {
            t: 0.0,
            x_minus: DMatrix::zeros(n_minus, grid.n_nodes()),
            x_plus: DMatrix::zeros(n_plus, grid.n_nodes()),
            xi: n0.map(DVector::zeros),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        let pde = self.x_minus.amax().max(self.x_plus.amax());
        self.xi.as_ref().map_or(pde, |xi| pde.max(xi.amax()))
    }

    /// Largest absolute difference over all components and nodes.
    pub fn max_diff(&self, other: &Self) -> f64 {
        let pde = (&self.x_minus - &other.x_minus)
            .amax()
            .max((&self.x_plus - &other.x_plus).amax());
        match (&self.xi, &other.xi) {
            (Some(a), Some(b)) => pde.max((a - b).amax()),
            _ => pde,
        }
    }
}

/// Ordered snapshots with a uniform time step between consecutive entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: Grid1D,
    pub dt: f64,
    pub snapshots: Vec<StateSnapshot>,
}

impl Trajectory {
    pub fn final_state(&self) -> &StateSnapshot {
        self.snapshots.last().expect("trajectory is never empty")
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    DimensionOrder,
    VelocityNotDiagonal,
    VelocityPositivity,
    VelocityOrdering,
    NonzeroDiagonalAmm,
    NonzeroDiagonalApp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push(&mut self, kind: ViolationKind, message: String) {
        // one entry per kind, reporting the first offending node
        if !self.has(kind) {
            self.violations.push(Violation { kind, message });
        }
    }
}

/// Lists every violated invariant of `sys`; an empty report means valid.
pub fn validate_system(sys: &HyperbolicSystem) -> ValidationReport {
    let mut report = ValidationReport::default();
    let grid = sys.grid();
    if sys.n_plus > sys.n_minus {
        report.push(
            ViolationKind::DimensionOrder,
            format!("n+ = {} exceeds n- = {}", sys.n_plus, sys.n_minus),
        );
    }
    for (label, lam) in [("-", &sys.lambda_minus), ("+", &sys.lambda_plus)] {
        let n = lam.rows();
        for k in 0..grid.n_nodes() {
            let z = grid.z(k);
            for i in 0..n {
                for j in 0..n {
                    if i != j && lam.get(k, i, j) != 0.0 {
                        report.push(
                            ViolationKind::VelocityNotDiagonal,
                            format!("Lambda{label} has an off-diagonal entry at z = {z}"),
                        );
                    }
                }
                if lam.get(k, i, i) <= 0.0 {
                    report.push(
                        ViolationKind::VelocityPositivity,
                        format!(
                            "velocity not positive: lambda{label}_{} = {} at z = {z}",
                            i + 1,
                            lam.get(k, i, i)
                        ),
                    );
                }
                if i + 1 < n && lam.get(k, i, i) <= lam.get(k, i + 1, i + 1) {
                    report.push(
                        ViolationKind::VelocityOrdering,
                        format!(
                            "velocity ordering not strict: lambda{label}_{} <= lambda{label}_{} at z = {z}",
                            i + 1,
                            i + 2
                        ),
                    );
                }
            }
        }
    }
    for (kind, name, a) in [
        (ViolationKind::NonzeroDiagonalAmm, "A^{--}", &sys.a_mm),
        (ViolationKind::NonzeroDiagonalApp, "A^{++}", &sys.a_pp),
    ] {
        for k in 0..grid.n_nodes() {
            for i in 0..a.rows() {
                if a.get(k, i, i) != 0.0 {
                    report.push(
                        kind,
                        format!(
                            "nonzero diagonal of {name}: entry ({0}, {0}) = {1} at z = {2}",
                            i + 1,
                            a.get(k, i, i),
                            grid.z(k)
                        ),
                    );
                }
            }
        }
    }
    report
}

/// Linear interpolation of `field` onto the nodes of `target`.
pub fn resample(field: &MatrixField1D, target: Grid1D) -> MatrixField1D {
    if field.grid() == target {
        return field.clone();
    }
    MatrixField1D::from_fn(target, field.rows(), field.cols(), |z| field.interp(z))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(n: usize) -> Grid1D {
        Grid1D::new(n).unwrap()
    }

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn two_by_two() -> HyperbolicSystem {
        HyperbolicSystem::constant(
            g(10),
            &[1.0],
            &[1.0],
            scalar(0.0),
            scalar(1.0),
            scalar(0.5),
            scalar(0.0),
            scalar(1.0),
            scalar(0.0),
        )
        .unwrap()
    }

    #[test]
    fn grid_rejects_single_cell() {
        assert!(Grid1D::new(1).is_err());
        let grid = g(4);
        assert_eq!(grid.nodes(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(grid.locate(1.0), (3, 1.0));
        assert_eq!(grid.locate(-0.3), (0, 0.0));
    }

    #[test]
    fn valid_two_by_two_has_empty_report() {
        assert!(validate_system(&two_by_two()).is_valid());
    }

    #[test]
    fn equal_velocities_violate_ordering() {
        let sys = HyperbolicSystem::constant(
            g(10),
            &[2.0, 1.5],
            &[1.0, 1.0],
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let report = validate_system(&sys);
        assert!(report.has(ViolationKind::VelocityOrdering));
        assert!(report.violations[0]
            .message
            .contains("velocity ordering not strict"));
    }

    #[test]
    fn nonzero_diagonal_of_amm_is_reported() {
        let mut sys = HyperbolicSystem::constant(
            g(10),
            &[2.0, 1.0],
            &[1.0],
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(1, 2),
            DMatrix::zeros(1, 1),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(2, 1),
        )
        .unwrap();
        sys.a_mm.set(5, 0, 0, 0.1);
        let report = validate_system(&sys);
        assert!(report.has(ViolationKind::NonzeroDiagonalAmm));
        assert!(report
            .violations
            .iter()
            .any(|v| v.message.contains("nonzero diagonal of A^{--}")));
    }

    #[test]
    fn n_plus_above_n_minus_is_reported() {
        let sys = HyperbolicSystem::constant(
            g(4),
            &[1.0],
            &[2.0, 1.0],
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 2),
            DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
            DMatrix::zeros(1, 2),
        )
        .unwrap();
        assert!(validate_system(&sys).has(ViolationKind::DimensionOrder));
    }

    #[test]
    fn shapes_are_enforced() {
        let grid = g(4);
        let res = HyperbolicSystem::constant(
            grid,
            &[1.0],
            &[1.0],
            scalar(0.0),
            scalar(0.0),
            scalar(0.0),
            scalar(0.0),
            DMatrix::zeros(2, 1),
            scalar(0.0),
        );
        assert!(matches!(res, Err(Error::Shape(_))));
    }

    #[test]
    fn resample_constant_and_linear() {
        let c = MatrixField1D::constant(g(3), &DMatrix::from_row_slice(1, 2, &[2.0, -1.0]));
        let r = resample(&c, g(7));
        for k in 0..8 {
            assert_eq!(r.at(k), c.at(0));
        }
        let lin = MatrixField1D::from_fn(g(2), 1, 1, scalar);
        let r = resample(&lin, g(4));
        assert_eq!(r.entry(0, 0), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn resample_quadratic_interpolates_linearly() {
        let quad = MatrixField1D::from_fn(g(2), 1, 1, |z| scalar(z * z));
        let r = resample(&quad, g(4));
        // halfway between f(0) = 0 and f(0.5) = 0.25
        assert!((r.get(1, 0, 0) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn resample_same_grid_is_identity() {
        let f = MatrixField1D::from_fn(g(5), 2, 2, |z| DMatrix::from_element(2, 2, z.sin()));
        assert_eq!(resample(&f, g(5)), f);
    }

    #[test]
    fn tri_field_entry_roundtrip() {
        let grid = g(3);
        let mut k = TriKernelField::zeros(grid, 2, 1);
        k.set(2, 1, 1, 0, 4.0);
        let e = k.entry(1, 0);
        assert_eq!(e[tri_index(2, 1)], 4.0);
        let mut k2 = TriKernelField::zeros(grid, 2, 1);
        k2.set_entry(1, 0, &e);
        assert_eq!(k, k2);
    }

    #[test]
    #[should_panic]
    fn tri_field_rejects_samples_outside_triangle() {
        TriKernelField::zeros(g(3), 1, 1).get(1, 2, 0, 0);
    }
}
