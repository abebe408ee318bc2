//! TOML project files: system definition, grid, solver mode, simulation and
//! output settings.
//!
//! Coefficient entries are a number (constant), `{ poly = [c0, c1, ...] }`
//! (polynomial in `z`) or `{ table = [v0, ..., vm] }` (samples on a uniform
//! grid of `[0, 1]`, linearly interpolated). Matrices are row-major lists of
//! rows; velocities are one entry per component.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{Grid1D, HyperbolicSystem, MatrixField1D, PdeOdeSystem};
use crate::sim::SimConfig;
use crate::volterra::BcMode;

pub const DEFAULT_GRID: usize = 100;
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Constant(f64),
    Poly { poly: Vec<f64> },
    Table { table: Vec<f64> },
}

impl Coefficient {
    pub fn eval(&self, z: f64) -> f64 {
        match self {
            Coefficient::Constant(v) => *v,
            Coefficient::Poly { poly } => poly.iter().rev().fold(0.0, |acc, c| acc * z + c),
            Coefficient::Table { table } => match table.len() {
                0 => 0.0,
                1 => table[0],
                m => {
                    let s = z.clamp(0.0, 1.0) * (m - 1) as f64;
                    let i = (s.floor() as usize).min(m - 2);
                    let t = s - i as f64;
                    table[i] * (1.0 - t) + table[i + 1] * t
                }
            },
        }
    }

    fn check(&self, location: &str) -> Result<()> {
        let ok = match self {
            Coefficient::Constant(v) => v.is_finite(),
            Coefficient::Poly { poly } => !poly.is_empty() && poly.iter().all(|v| v.is_finite()),
            Coefficient::Table { table } => {
                !table.is_empty() && table.iter().all(|v| v.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(config_error(
                location,
                "coefficient must be finite and non-empty",
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    #[default]
    Hyperbolic,
    PdeOde,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDef {
    #[serde(default)]
    pub kind: SystemKind,
    pub lambda_minus: Vec<Coefficient>,
    pub lambda_plus: Vec<Coefficient>,
    #[serde(default)]
    pub a_mm: Option<Vec<Vec<Coefficient>>>,
    #[serde(default)]
    pub a_mp: Option<Vec<Vec<Coefficient>>>,
    #[serde(default)]
    pub a_pm: Option<Vec<Vec<Coefficient>>>,
    #[serde(default)]
    pub a_pp: Option<Vec<Vec<Coefficient>>>,
    pub q: Vec<Vec<f64>>,
    #[serde(default)]
    pub r: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub f: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub c: Option<Vec<Vec<f64>>>,
}

/// A system built on a concrete grid.
#[derive(Debug, Clone, PartialEq)]
pub enum BuiltSystem {
    Hyperbolic(HyperbolicSystem),
    PdeOde(PdeOdeSystem),
}

impl BuiltSystem {
    pub fn base(&self) -> &HyperbolicSystem {
        match self {
            BuiltSystem::Hyperbolic(s) => s,
            BuiltSystem::PdeOde(s) => &s.base,
        }
    }
}

fn config_error(location: &str, message: impl Into<String>) -> Error {
    Error::Config {
        location: location.into(),
        message: message.into(),
    }
}

fn dense(rows: &[Vec<f64>], shape: (usize, usize), key: &str) -> Result<DMatrix<f64>> {
    // an empty list stands for a matrix with no rows or no columns
    if rows.is_empty() && (shape.0 == 0 || shape.1 == 0) {
        return Ok(DMatrix::zeros(shape.0, shape.1));
    }
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(config_error(
            &format!("system.{key}"),
            format!("expected a {}x{} matrix", shape.0, shape.1),
        ));
    }
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(config_error(
                    &format!("system.{key}[{i}][{j}]"),
                    "entry must be finite",
                ));
            }
        }
    }
    Ok(DMatrix::from_fn(shape.0, shape.1, |i, j| rows[i][j]))
}

fn field(
    entries: &Option<Vec<Vec<Coefficient>>>,
    shape: (usize, usize),
    grid: Grid1D,
    key: &str,
) -> Result<MatrixField1D> {
    let Some(rows) = entries else {
        return Ok(MatrixField1D::zeros(grid, shape.0, shape.1));
    };
    if rows.is_empty() && (shape.0 == 0 || shape.1 == 0) {
        return Ok(MatrixField1D::zeros(grid, shape.0, shape.1));
    }
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(config_error(
            &format!("system.{key}"),
            format!("expected a {}x{} matrix", shape.0, shape.1),
        ));
    }
    for (i, row) in rows.iter().enumerate() {
        for (j, c) in row.iter().enumerate() {
            c.check(&format!("system.{key}[{i}][{j}]"))?;
        }
    }
    Ok(MatrixField1D::from_fn(grid, shape.0, shape.1, |z| {
        DMatrix::from_fn(shape.0, shape.1, |i, j| rows[i][j].eval(z))
    }))
}

fn velocities(entries: &[Coefficient], grid: Grid1D, key: &str) -> Result<MatrixField1D> {
    if entries.is_empty() {
        return Err(config_error(
            &format!("system.{key}"),
            "at least one component required",
        ));
    }
    for (i, c) in entries.iter().enumerate() {
        c.check(&format!("system.{key}[{i}]"))?;
    }
    let components: Vec<Vec<f64>> = entries
        .iter()
        .map(|c| grid.nodes().iter().map(|z| c.eval(*z)).collect())
        .collect();
    MatrixField1D::diagonal(grid, &components)
}

impl SystemDef {
    pub fn n_minus(&self) -> usize {
        self.lambda_minus.len()
    }

    pub fn n_plus(&self) -> usize {
        self.lambda_plus.len()
    }

    /// Samples the coefficients on a grid with `n_cells` cells.
    pub fn build(&self, n_cells: usize) -> Result<BuiltSystem> {
        let grid = Grid1D::new(n_cells)?;
        let (nm, np) = (self.n_minus(), self.n_plus());
        let lm = velocities(&self.lambda_minus, grid, "lambda_minus")?;
        let lp = velocities(&self.lambda_plus, grid, "lambda_plus")?;
        let q = dense(&self.q, (np, nm), "q")?;
        let r = match &self.r {
            Some(r) => dense(r, (nm, np), "r")?,
            None => DMatrix::zeros(nm, np),
        };
        let base = HyperbolicSystem::new(
            lm,
            lp,
            field(&self.a_mm, (nm, nm), grid, "a_mm")?,
            field(&self.a_mp, (nm, np), grid, "a_mp")?,
            field(&self.a_pm, (np, nm), grid, "a_pm")?,
            field(&self.a_pp, (np, np), grid, "a_pp")?,
            q,
            r,
        )
        .map_err(|e| config_error("system", e.to_string()))?;
        match self.kind {
            SystemKind::Hyperbolic => {
                for (key, v) in [("f", &self.f), ("b", &self.b), ("c", &self.c)] {
                    if v.is_some() {
                        return Err(config_error(
                            &format!("system.{key}"),
                            "ODE matrices require kind = \"pde-ode\"",
                        ));
                    }
                }
                Ok(BuiltSystem::Hyperbolic(base))
            }
            SystemKind::PdeOde => {
                let f = self
                    .f
                    .as_ref()
                    .ok_or_else(|| config_error("system.f", "missing ODE matrix"))?;
                let n0 = f.len();
                let f = dense(f, (n0, n0), "f")?;
                let b = dense(
                    self.b
                        .as_ref()
                        .ok_or_else(|| config_error("system.b", "missing ODE matrix"))?,
                    (n0, nm),
                    "b",
                )?;
                let c = dense(
                    self.c
                        .as_ref()
                        .ok_or_else(|| config_error("system.c", "missing ODE matrix"))?,
                    (np, n0),
                    "c",
                )?;
                PdeOdeSystem::new(base, f, b, c)
                    .map(BuiltSystem::PdeOde)
                    .map_err(|e| config_error("system", e.to_string()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    system: SystemDef,
    grid: Option<usize>,
    bc_mode: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    #[serde(default)]
    simulation: SimConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectConfig {
    pub system: SystemDef,
    pub grid: usize,
    pub bc_mode: BcMode,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub simulation: SimConfig,
}

pub fn parse_bc_mode(s: &str) -> Option<BcMode> {
    match s {
        "hu" => Some(BcMode::TopZero),
        "remark2" => Some(BcMode::TailBalance),
        _ => None,
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before
        .rfind('\n')
        .map_or(before.len(), |p| before.len() - p - 1)
        + 1;
    (line, col)
}

impl ProjectConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let location = match e.span() {
                Some(span) => {
                    let (line, col) = line_col(text, span.start);
                    format!("line {line}, column {col}")
                }
                None => "document".into(),
            };
            config_error(&location, e.message().trim())
        })?;
        let grid = raw.grid.unwrap_or(DEFAULT_GRID);
        if grid < 2 {
            return Err(config_error("grid", "need at least 2 cells"));
        }
        let bc_mode = match raw.bc_mode.as_deref() {
            None => BcMode::default(),
            Some(s) => parse_bc_mode(s).ok_or_else(|| {
                config_error(
                    "bc_mode",
                    format!("unknown mode {s:?}, expected \"hu\" or \"remark2\""),
                )
            })?,
        };
        raw.simulation
            .check()
            .map_err(|e| config_error("simulation", e.to_string()))?;
        let cfg = Self {
            system: raw.system,
            grid,
            bc_mode,
            seed: raw.seed.unwrap_or(DEFAULT_SEED),
            out: raw.out,
            simulation: raw.simulation,
        };
        // shapes are grid independent, so one coarse build locates errors early
        cfg.system.build(2)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config { location, message } => Error::Config {
                location: format!("{}: {location}", path.display()),
                message,
            },
            other => other,
        })
    }

    pub fn build(&self) -> Result<BuiltSystem> {
        self.system.build(self.grid)
    }
}
