//! One explicit upwind integrator for every system form: the original
//! coupled system, the intermediate and strict-feedback targets, and both
//! PDE-ODE variants.
//!
//! A [`GeneralizedCouplingSpec`] lists the terms acting on each state group
//! so that the same description is consumed by the simulator and by the
//! structure checker.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctrl_algebra::BoundaryAlgebra;
use crate::error::{Error, Result};
use crate::fredholm::SffCoefficients;
use crate::model::{
    trapezoid_weights, Grid1D, HyperbolicSystem, MatrixField1D, PdeOdeSystem, SqKernelField,
    StateSnapshot, Trajectory,
};
use crate::volterra::{TransformedCoefficients, VolterraKernelSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Minus,
    Plus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Zero,
    One,
}

/// Integration range of an integral term at position `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Range {
    /// `[0, z]`
    Lower,
    /// `[z, 1]`
    Upper,
    /// `[0, 1]`
    Full,
}

/// `gain(z) x_source(z)`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalTerm {
    pub source: Channel,
    pub gain: MatrixField1D,
}

/// `gain(z) x_source(boundary)`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceTerm {
    pub source: Channel,
    pub at: Boundary,
    pub gain: MatrixField1D,
}

/// `int_range kernel(z, zeta) x_source(zeta) dzeta`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegralTerm {
    pub source: Channel,
    pub range: Range,
    pub kernel: SqKernelField,
}

/// Right-hand side terms of one state group besides transport.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PdeBlock {
    pub local: Vec<LocalTerm>,
    pub traces: Vec<TraceTerm>,
    pub integrals: Vec<IntegralTerm>,
}

impl PdeBlock {
    pub fn is_empty(&self) -> bool {
        self.local.is_empty() && self.traces.is_empty() && self.integrals.is_empty()
    }
}

/// `x^+(0) = Q x^-(0) + C xi + int_0^1 W(z) x^+(z) dz`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryZero {
    pub q: DMatrix<f64>,
    pub ode_gain: Option<DMatrix<f64>>,
    pub weights: Option<MatrixField1D>,
}

/// `x^-(1) = R x^+(1) + int_0^1 (W^-(z) x^-(z) + W^+(z) x^+(z)) dz + u`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryOne {
    pub r: DMatrix<f64>,
    pub weights_minus: Option<MatrixField1D>,
    pub weights_plus: Option<MatrixField1D>,
}

/// `gain x_source(boundary)` acting on the ODE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeTrace {
    pub source: Channel,
    pub at: Boundary,
    pub gain: DMatrix<f64>,
}

/// `xi' = F xi + sum of traces`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeBlock {
    pub f: DMatrix<f64>,
    pub traces: Vec<OdeTrace>,
}

/// Complete description of a simulated system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedCouplingSpec {
    pub label: String,
    pub n_minus: usize,
    pub n_plus: usize,
    pub lambda_minus: MatrixField1D,
    pub lambda_plus: MatrixField1D,
    pub minus: PdeBlock,
    pub plus: PdeBlock,
    pub bc0: BoundaryZero,
    pub bc1: BoundaryOne,
    pub ode: Option<OdeBlock>,
}

impl GeneralizedCouplingSpec {
    pub fn grid(&self) -> Grid1D {
        self.lambda_minus.grid()
    }

    pub fn n0(&self) -> Option<usize> {
        self.ode.as_ref().map(|o| o.f.nrows())
    }

    fn dim(&self, c: Channel) -> usize {
        match c {
            Channel::Minus => self.n_minus,
            Channel::Plus => self.n_plus,
        }
    }

    /// Checks every matrix shape against the state dimensions and grid.
    pub fn check_shapes(&self) -> Result<()> {
        let grid = self.grid();
        let bad = |what: &str, got: (usize, usize), want: (usize, usize)| {
            Err(Error::Shape(format!(
                "{what} has shape {got:?}, expected {want:?}"
            )))
        };
        if self.lambda_plus.grid() != grid {
            return Err(Error::Shape("velocity fields on different grids".into()));
        }
        if self.lambda_minus.shape() != (self.n_minus, self.n_minus) {
            return bad(
                "Lambda^-",
                self.lambda_minus.shape(),
                (self.n_minus, self.n_minus),
            );
        }
        if self.lambda_plus.shape() != (self.n_plus, self.n_plus) {
            return bad(
                "Lambda^+",
                self.lambda_plus.shape(),
                (self.n_plus, self.n_plus),
            );
        }
        for (block, rows, name) in [
            (&self.minus, self.n_minus, "x^-"),
            (&self.plus, self.n_plus, "x^+"),
        ] {
            for t in &block.local {
                if t.gain.shape() != (rows, self.dim(t.source)) || t.gain.grid() != grid {
                    return bad(
                        &format!("local gain of {name}"),
                        t.gain.shape(),
                        (rows, self.dim(t.source)),
                    );
                }
            }
            for t in &block.traces {
                if t.gain.shape() != (rows, self.dim(t.source)) || t.gain.grid() != grid {
                    return bad(
                        &format!("trace gain of {name}"),
                        t.gain.shape(),
                        (rows, self.dim(t.source)),
                    );
                }
            }
            for t in &block.integrals {
                let got = (t.kernel.rows(), t.kernel.cols());
                if got != (rows, self.dim(t.source)) || t.kernel.grid() != grid {
                    return bad(
                        &format!("integral kernel of {name}"),
                        got,
                        (rows, self.dim(t.source)),
                    );
                }
            }
        }
        if self.bc0.q.shape() != (self.n_plus, self.n_minus) {
            return bad("Q", self.bc0.q.shape(), (self.n_plus, self.n_minus));
        }
        if let Some(w) = &self.bc0.weights {
            if w.shape() != (self.n_plus, self.n_plus) {
                return bad("x^+(0) weights", w.shape(), (self.n_plus, self.n_plus));
            }
        }
        if self.bc1.r.shape() != (self.n_minus, self.n_plus) {
            return bad("R", self.bc1.r.shape(), (self.n_minus, self.n_plus));
        }
        if let Some(w) = &self.bc1.weights_minus {
            if w.shape() != (self.n_minus, self.n_minus) {
                return bad(
                    "x^-(1) weights on x^-",
                    w.shape(),
                    (self.n_minus, self.n_minus),
                );
            }
        }
        if let Some(w) = &self.bc1.weights_plus {
            if w.shape() != (self.n_minus, self.n_plus) {
                return bad(
                    "x^-(1) weights on x^+",
                    w.shape(),
                    (self.n_minus, self.n_plus),
                );
            }
        }
        match (&self.ode, &self.bc0.ode_gain) {
            (Some(ode), gain) => {
                let n0 = ode.f.nrows();
                if ode.f.ncols() != n0 {
                    return bad("F", ode.f.shape(), (n0, n0));
                }
                for t in &ode.traces {
                    if t.gain.shape() != (n0, self.dim(t.source)) {
                        return bad("ODE trace gain", t.gain.shape(), (n0, self.dim(t.source)));
                    }
                }
                if let Some(c) = gain {
                    if c.shape() != (self.n_plus, n0) {
                        return bad("C", c.shape(), (self.n_plus, n0));
                    }
                }
            }
            (None, Some(_)) => {
                return Err(Error::Shape(
                    "ODE gain in x^+(0) without an ODE block".into(),
                ));
            }
            (None, None) => {}
        }
        Ok(())
    }
}

fn field_or_skip(f: &MatrixField1D) -> Option<MatrixField1D> {
    (!f.is_zero()).then(|| f.clone())
}

fn local_terms(pairs: [(Channel, &MatrixField1D); 2]) -> Vec<LocalTerm> {
    pairs
        .into_iter()
        .filter_map(|(source, g)| field_or_skip(g).map(|gain| LocalTerm { source, gain }))
        .collect()
}

/// The original coupled system.
pub fn as_spec(sys: &HyperbolicSystem) -> GeneralizedCouplingSpec {
    GeneralizedCouplingSpec {
        label: "original".into(),
        n_minus: sys.n_minus,
        n_plus: sys.n_plus,
        lambda_minus: sys.lambda_minus.clone(),
        lambda_plus: sys.lambda_plus.clone(),
        minus: PdeBlock {
            local: local_terms([(Channel::Minus, &sys.a_mm), (Channel::Plus, &sys.a_mp)]),
            ..Default::default()
        },
        plus: PdeBlock {
            local: local_terms([(Channel::Minus, &sys.a_pm), (Channel::Plus, &sys.a_pp)]),
            ..Default::default()
        },
        bc0: BoundaryZero {
            q: sys.q.clone(),
            ode_gain: None,
            weights: None,
        },
        bc1: BoundaryOne {
            r: sys.r.clone(),
            weights_minus: None,
            weights_plus: None,
        },
        ode: None,
    }
}

/// The original system with the boundary feedback that produces the
/// target input `u_bar`: `x^-(1) = int K(1, .) x + u_bar`.
pub fn as_closed_loop_spec(
    sys: &HyperbolicSystem,
    kernels: &VolterraKernelSet,
) -> GeneralizedCouplingSpec {
    let grid = kernels.grid();
    let n = grid.n_cells();
    let mut spec = as_spec(sys);
    spec.label = "original-closed-loop".into();
    let row = |k: &crate::model::TriKernelField| {
        MatrixField1D::from_nodes(grid, &(0..=n).map(|l| k.at(n, l)).collect::<Vec<_>>())
            .expect("node count matches grid")
    };
    spec.bc1 = BoundaryOne {
        r: DMatrix::zeros(sys.n_minus, sys.n_plus),
        weights_minus: Some(row(&kernels.k_mm)),
        weights_plus: Some(row(&kernels.k_mp)),
    };
    spec
}

/// Trace gain `G(z) (Q^perp)^L` acting on `x^-(0)`: the `x~_2^-(0)` channel.
fn annihilator_trace(gain: &MatrixField1D, algebra: &BoundaryAlgebra) -> Option<TraceTerm> {
    if algebra.delta_n() == 0 || gain.is_zero() {
        return None;
    }
    let rows = algebra.second_partition_rows();
    Some(TraceTerm {
        source: Channel::Minus,
        at: Boundary::Zero,
        gain: gain.map_nodes(|_, g| g * &rows),
    })
}

fn trace_term(source: Channel, at: Boundary, gain: &MatrixField1D) -> Option<TraceTerm> {
    field_or_skip(gain).map(|gain| TraceTerm { source, at, gain })
}

fn target_boundaries(sys: &HyperbolicSystem) -> (BoundaryZero, BoundaryOne) {
    (
        BoundaryZero {
            q: sys.q.clone(),
            ode_gain: None,
            weights: None,
        },
        BoundaryOne {
            r: DMatrix::zeros(sys.n_minus, sys.n_plus),
            weights_minus: None,
            weights_plus: None,
        },
    )
}

/// Target of the Volterra step: only `z = 0` trace couplings remain.
pub fn as_intermediate_spec(
    coeffs: &TransformedCoefficients,
    sys: &HyperbolicSystem,
    algebra: &BoundaryAlgebra,
) -> GeneralizedCouplingSpec {
    let (bc0, bc1) = target_boundaries(sys);
    GeneralizedCouplingSpec {
        label: "intermediate".into(),
        n_minus: sys.n_minus,
        n_plus: sys.n_plus,
        lambda_minus: sys.lambda_minus.clone(),
        lambda_plus: sys.lambda_plus.clone(),
        minus: PdeBlock {
            traces: trace_term(Channel::Minus, Boundary::Zero, &coeffs.a0_minus)
                .into_iter()
                .collect(),
            ..Default::default()
        },
        plus: PdeBlock {
            traces: trace_term(Channel::Plus, Boundary::Zero, &coeffs.a0_plus)
                .into_iter()
                .chain(annihilator_trace(&coeffs.b0_plus, algebra))
                .collect(),
            ..Default::default()
        },
        bc0,
        bc1,
        ode: None,
    }
}

/// Strict-feedback form: the `x^+` couplings act through `x^+(1)`.
pub fn as_sff_spec(
    sff: &SffCoefficients,
    coeffs: &TransformedCoefficients,
    sys: &HyperbolicSystem,
    algebra: &BoundaryAlgebra,
) -> GeneralizedCouplingSpec {
    let mut spec = as_intermediate_spec(coeffs, sys, algebra);
    spec.label = "sff".into();
    spec.plus = PdeBlock {
        traces: trace_term(Channel::Plus, Boundary::One, &sff.a0_tilde_plus)
            .into_iter()
            .chain(annihilator_trace(&sff.b0_tilde_plus, algebra))
            .collect(),
        ..Default::default()
    };
    spec
}

/// PDE-ODE cascade with the ODE driven by `x^-(0)`.
pub fn as_pdeode_spec(sys: &PdeOdeSystem) -> GeneralizedCouplingSpec {
    let mut spec = as_spec(&sys.base);
    spec.label = "pdeode".into();
    spec.bc0.ode_gain = Some(sys.c.clone());
    spec.ode = Some(OdeBlock {
        f: sys.f.clone(),
        traces: vec![OdeTrace {
            source: Channel::Minus,
            at: Boundary::Zero,
            gain: sys.b.clone(),
        }],
    });
    spec
}

/// Time-dependent boundary input of one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSignal {
    Zero,
    Step {
        amplitude: f64,
        #[serde(default)]
        t0: f64,
    },
    Sine {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Piecewise linear through `(times[i], values[i])`, constant outside.
    Table {
        times: Vec<f64>,
        values: Vec<f64>,
    },
}

impl InputSignal {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            InputSignal::Zero => 0.0,
            InputSignal::Step { amplitude, t0 } => {
                if t >= *t0 {
                    *amplitude
                } else {
                    0.0
                }
            }
            InputSignal::Sine {
                amplitude,
                frequency,
                phase,
            } => amplitude * (2.0 * std::f64::consts::PI * frequency * t + phase).sin(),
            InputSignal::Table { times, values } => {
                if times.is_empty() {
                    return 0.0;
                }
                if t <= times[0] {
                    return values[0];
                }
                for w in 0..times.len() - 1 {
                    if t <= times[w + 1] {
                        let s = (t - times[w]) / (times[w + 1] - times[w]);
                        return values[w] * (1.0 - s) + values[w + 1] * s;
                    }
                }
                values[values.len() - 1]
            }
        }
    }
}

/// Initial profile of one state group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    /// One value per component.
    Constant { values: Vec<f64> },
    /// `amplitude_i * sin(pi * frequency * z)` per component.
    Sine {
        amplitudes: Vec<f64>,
        frequency: f64,
    },
    /// Node samples, one row per component.
    Nodes { rows: Vec<Vec<f64>> },
    /// Seeded smooth random profile vanishing with its derivative at both ends.
    Random { amplitude: f64 },
}

impl Profile {
    pub fn zero() -> Self {
        Profile::Constant { values: Vec::new() }
    }

    fn materialize(&self, grid: &Grid1D, dim: usize, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
        let nn = grid.n_nodes();
        let pick = |v: &[f64], i: usize| {
            if v.is_empty() {
                0.0
            } else {
                v[i.min(v.len() - 1)]
            }
        };
        match self {
            Profile::Constant { values } => Ok(DMatrix::from_fn(dim, nn, |i, _| pick(values, i))),
            Profile::Sine {
                amplitudes,
                frequency,
            } => Ok(DMatrix::from_fn(dim, nn, |i, k| {
                pick(amplitudes, i) * (std::f64::consts::PI * frequency * grid.z(k)).sin()
            })),
            Profile::Nodes { rows } => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != nn) {
                    return Err(Error::Shape(format!(
                        "node profile must have {dim} rows of {nn} samples"
                    )));
                }
                Ok(DMatrix::from_fn(dim, nn, |i, k| rows[i][k]))
            }
            Profile::Random { amplitude } => Ok(smooth_random_profile(grid, dim, *amplitude, rng)),
        }
    }
}

/// Fourier sum of at most three modes times `sin^2(pi z)`, so the profile and
/// its first derivative vanish at both boundaries.
pub fn smooth_random_profile(
    grid: &Grid1D,
    dim: usize,
    amplitude: f64,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(dim, grid.n_nodes());
    for i in 0..dim {
        let modes = rng.random_range(1..=3);
        let coefs: Vec<(f64, f64)> = (0..modes)
            .map(|_| {
                (
                    rng.random_range(-1.0..1.0),
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        for k in 0..grid.n_nodes() {
            let z = grid.z(k);
            let envelope = (std::f64::consts::PI * z).sin().powi(2);
            let s: f64 = coefs
                .iter()
                .enumerate()
                .map(|(m, (a, phi))| a * ((m + 1) as f64 * std::f64::consts::PI * z + phi).cos())
                .sum();
            out[(i, k)] = amplitude * envelope * s;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialData {
    pub x_minus: Profile,
    pub x_plus: Profile,
    pub xi: Vec<f64>,
}

impl Default for InitialData {
    fn default() -> Self {
        Self {
            x_minus: Profile::zero(),
            x_plus: Profile::zero(),
            xi: Vec::new(),
        }
    }
}

impl InitialData {
    pub fn materialize(&self, spec: &GeneralizedCouplingSpec, seed: u64) -> Result<StateSnapshot> {
        let grid = spec.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x_minus = self.x_minus.materialize(&grid, spec.n_minus, &mut rng)?;
        let x_plus = self.x_plus.materialize(&grid, spec.n_plus, &mut rng)?;
        let xi = spec.n0().map(|n0| {
            DVector::from_fn(n0, |i, _| {
                if self.xi.is_empty() {
                    0.0
                } else {
                    self.xi[i.min(self.xi.len() - 1)]
                }
            })
        });
        Ok(StateSnapshot {
            t: 0.0,
            x_minus,
            x_plus,
            xi,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub t_end: f64,
    pub cfl: f64,
    /// Keep every `stride`-th step (the final state is always kept).
    pub stride: usize,
    /// One signal per `x^-` channel; missing channels are zero.
    pub inputs: Vec<InputSignal>,
    pub initial: InitialData,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            cfl: 0.9,
            stride: 1,
            inputs: Vec::new(),
            initial: InitialData::default(),
        }
    }
}

impl SimConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.t_end > 0.0) {
            return Err(Error::InvalidSystem(format!(
                "t_end must be positive, got {}",
                self.t_end
            )));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::InvalidSystem(format!(
                "cfl must lie in (0, 1], got {}",
                self.cfl
            )));
        }
        if self.stride == 0 {
            return Err(Error::InvalidSystem("stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of steps and step size for a grid and fastest velocity.
    pub fn time_steps(&self, h: f64, lambda_max: f64) -> (usize, f64) {
        let dt_max = self.cfl * h / lambda_max;
        let steps = ((self.t_end / dt_max) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        (steps, self.t_end / steps as f64)
    }

    pub fn input_at(&self, t: f64, n_minus: usize) -> DVector<f64> {
        DVector::from_fn(n_minus, |i, _| {
            self.inputs.get(i).map_or(0.0, |s| s.value(t))
        })
    }
}

/// Simulates with initial data and inputs taken from the configuration.
pub fn simulate(spec: &GeneralizedCouplingSpec, cfg: &SimConfig, seed: u64) -> Result<Trajectory> {
    let initial = cfg.initial.materialize(spec, seed)?;
    simulate_from(spec, cfg, &initial, &|t| cfg.input_at(t, spec.n_minus))
}

fn velocities(field: &MatrixField1D) -> Vec<Vec<f64>> {
    (0..field.rows()).map(|i| field.entry(i, i)).collect()
}

/// Adds `gain x` to `out` for a node-major row-major gain block.
#[inline]
fn gain_mul_add(gain: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let row = &gain[i * cols..(i + 1) * cols];
        *o += row.iter().zip(x).map(|(g, v)| g * v).sum::<f64>();
    }
}

struct Stepper<'a> {
    spec: &'a GeneralizedCouplingSpec,
    grid: Grid1D,
    lam_m: Vec<Vec<f64>>,
    lam_p: Vec<Vec<f64>>,
}

impl Stepper<'_> {
    fn source<'b>(
        &self,
        c: Channel,
        xm: &'b DMatrix<f64>,
        xp: &'b DMatrix<f64>,
    ) -> &'b DMatrix<f64> {
        match c {
            Channel::Minus => xm,
            Channel::Plus => xp,
        }
    }

    /// Coupling terms of one block at every node.
    fn coupling(
        &self,
        block: &PdeBlock,
        rows: usize,
        xm: &DMatrix<f64>,
        xp: &DMatrix<f64>,
    ) -> DMatrix<f64> {
        let nn = self.grid.n_nodes();
        let n = self.grid.n_cells();
        let h = self.grid.h();
        let mut out = DMatrix::zeros(rows, nn);
        if block.is_empty() {
            return out;
        }
        for t in &block.local {
            let x = self.source(t.source, xm, xp);
            let cols = x.nrows();
            let raw = t.gain.raw();
            for k in 0..nn {
                let g = &raw[k * rows * cols..(k + 1) * rows * cols];
                let xk = x.column(k);
                gain_mul_add(g, cols, xk.as_slice(), out.column_mut(k).as_mut_slice());
            }
        }
        for t in &block.traces {
            let x = self.source(t.source, xm, xp);
            let cols = x.nrows();
            let node = match t.at {
                Boundary::Zero => 0,
                Boundary::One => n,
            };
            let xb = x.column(node).clone_owned();
            let raw = t.gain.raw();
            for k in 0..nn {
                let g = &raw[k * rows * cols..(k + 1) * rows * cols];
                gain_mul_add(g, cols, xb.as_slice(), out.column_mut(k).as_mut_slice());
            }
        }
        for t in &block.integrals {
            let x = self.source(t.source, xm, xp);
            let cols = x.nrows();
            for k in 0..nn {
                let (lo, hi) = match t.range {
                    Range::Lower => (0, k),
                    Range::Upper => (k, n),
                    Range::Full => (0, n),
                };
                let w = trapezoid_weights(hi - lo + 1, h);
                for (off, wl) in w.iter().enumerate() {
                    let l = lo + off;
                    for i in 0..rows {
                        let mut acc = 0.0;
                        for j in 0..cols {
                            acc += t.kernel.get(k, l, i, j) * x[(j, l)];
                        }
                        out[(i, k)] += wl * acc;
                    }
                }
            }
        }
        out
    }

    fn ode_rhs(
        &self,
        ode: &OdeBlock,
        xi: &DVector<f64>,
        xm: &DMatrix<f64>,
        xp: &DMatrix<f64>,
    ) -> DVector<f64> {
        let n = self.grid.n_cells();
        let mut d = &ode.f * xi;
        for t in &ode.traces {
            let x = self.source(t.source, xm, xp);
            let node = match t.at {
                Boundary::Zero => 0,
                Boundary::One => n,
            };
            d += &t.gain * x.column(node);
        }
        d
    }

    fn step(&self, state: &StateSnapshot, dt: f64, u_new: &DVector<f64>) -> Result<StateSnapshot> {
        let spec = self.spec;
        let n = self.grid.n_cells();
        let h = self.grid.h();
        let (xm, xp) = (&state.x_minus, &state.x_plus);
        let cm = self.coupling(&spec.minus, spec.n_minus, xm, xp);
        let cp = self.coupling(&spec.plus, spec.n_plus, xm, xp);

        let mut ym = xm.clone();
        for i in 0..spec.n_minus {
            for k in 0..n {
                let adv = self.lam_m[i][k] * (xm[(i, k + 1)] - xm[(i, k)]) / h;
                ym[(i, k)] = xm[(i, k)] + dt * (adv + cm[(i, k)]);
            }
        }
        let mut yp = xp.clone();
        for i in 0..spec.n_plus {
            for k in 1..=n {
                let adv = -self.lam_p[i][k] * (xp[(i, k)] - xp[(i, k - 1)]) / h;
                yp[(i, k)] = xp[(i, k)] + dt * (adv + cp[(i, k)]);
            }
        }
        let xi_new = match (&spec.ode, &state.xi) {
            (Some(ode), Some(xi)) => Some(xi + self.ode_rhs(ode, xi, xm, xp) * dt),
            _ => None,
        };

        // x^+(0) from the fresh x^-(0), with the z = 0 sample of the
        // boundary integral moved to the left-hand side
        let w = self.grid.trapezoid_weights();
        let mut rhs0 = &spec.bc0.q * ym.column(0);
        if let (Some(c), Some(xi)) = (&spec.bc0.ode_gain, &xi_new) {
            rhs0 += c * xi;
        }
        let mut lhs0 = DMatrix::identity(spec.n_plus, spec.n_plus);
        if let Some(wf) = &spec.bc0.weights {
            for l in 1..=n {
                rhs0 += wf.at(l) * yp.column(l) * w[l];
            }
            lhs0 -= wf.at(0) * w[0];
        }
        let b0 = lhs0
            .lu()
            .solve(&rhs0)
            .ok_or(Error::SingularStep { node: 0 })?;
        yp.set_column(0, &b0);

        let mut rhs1 = &spec.bc1.r * yp.column(n) + u_new;
        let mut lhs1 = DMatrix::identity(spec.n_minus, spec.n_minus);
        if let Some(wf) = &spec.bc1.weights_plus {
            for l in 0..=n {
                rhs1 += wf.at(l) * yp.column(l) * w[l];
            }
        }
        if let Some(wf) = &spec.bc1.weights_minus {
            for l in 0..n {
                rhs1 += wf.at(l) * ym.column(l) * w[l];
            }
            lhs1 -= wf.at(n) * w[n];
        }
        let b1 = lhs1
            .lu()
            .solve(&rhs1)
            .ok_or(Error::SingularStep { node: n })?;
        ym.set_column(n, &b1);

        Ok(StateSnapshot {
            t: state.t + dt,
            x_minus: ym,
            x_plus: yp,
            xi: xi_new,
        })
    }
}

/// Simulates from an explicit initial state with input `u(t)` on `x^-(1)`.
///
/// The boundary values of `initial` are used as given; the first step
/// imposes the boundary conditions.
pub fn simulate_from(
    spec: &GeneralizedCouplingSpec,
    cfg: &SimConfig,
    initial: &StateSnapshot,
    input: &dyn Fn(f64) -> DVector<f64>,
) -> Result<Trajectory> {
    spec.check_shapes()?;
    cfg.check()?;
    let grid = spec.grid();
    if initial.x_minus.shape() != (spec.n_minus, grid.n_nodes())
        || initial.x_plus.shape() != (spec.n_plus, grid.n_nodes())
    {
        return Err(Error::Shape("initial state does not match the spec".into()));
    }
    let lam_m = velocities(&spec.lambda_minus);
    let lam_p = velocities(&spec.lambda_plus);
    for lam in lam_m.iter().chain(&lam_p) {
        if lam.iter().any(|v| *v <= 0.0) {
            return Err(Error::InvalidSystem("velocities must be positive".into()));
        }
    }
    let lambda_max = lam_m
        .iter()
        .chain(&lam_p)
        .flatten()
        .fold(0.0_f64, |m, v| m.max(*v));
    let (steps, dt) = cfg.time_steps(grid.h(), lambda_max);
    let stepper = Stepper {
        spec,
        grid,
        lam_m,
        lam_p,
    };
    let mut state = initial.clone();
    if spec.ode.is_some() && state.xi.is_none() {
        state.xi = spec.n0().map(DVector::zeros);
    }
    let mut snapshots = vec![state.clone()];
    for s in 1..=steps {
        let t_new = s as f64 * dt;
        let mut next = stepper.step(&state, dt, &input(t_new))?;
        next.t = t_new;
        let norm = next.sup_norm();
        if !norm.is_finite() || norm > 1e12 {
            return Err(Error::UnstableStep { time: t_new, norm });
        }
        if s % cfg.stride == 0 || s == steps {
            snapshots.push(next.clone());
        }
        state = next;
    }
    Ok(Trajectory {
        grid,
        dt: dt * cfg.stride as f64,
        snapshots,
    })
}
