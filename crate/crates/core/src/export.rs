//! CSV export of fields, kernels and trajectories, and a JSON metadata
//! sidecar. Numbers are written in shortest round-trip form, so identical
//! data gives byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::Result;
use crate::model::{MatrixField1D, SqKernelField, Trajectory, TriKernelField};

fn entry_names(prefix: &str, rows: usize, cols: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(rows * cols);
    for i in 1..=rows {
        for j in 1..=cols {
            out.push(format!("{prefix}_{i}_{j}"));
        }
    }
    out
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn row(w: &mut impl Write, values: impl IntoIterator<Item = f64>) -> Result<()> {
    let line: Vec<String> = values.into_iter().map(|v| v.to_string()).collect();
    writeln!(w, "{}", line.join(","))?;
    Ok(())
}

/// Header `z,<name>_i_j,...`; one line per node.
pub fn write_field_csv(path: &Path, name: &str, field: &MatrixField1D) -> Result<()> {
    let mut w = create(path)?;
    let (r, c) = field.shape();
    writeln!(w, "z,{}", entry_names(name, r, c).join(","))?;
    let grid = field.grid();
    for k in 0..grid.n_nodes() {
        let m = field.at(k);
        row(
            &mut w,
            std::iter::once(grid.z(k)).chain(
                (0..r)
                    .flat_map(|i| (0..c).map(move |j| (i, j)))
                    .map(|(i, j)| m[(i, j)]),
            ),
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Header `z,zeta,<name>_i_j,...` over the triangle `zeta <= z`.
pub fn write_tri_kernel_csv(path: &Path, name: &str, kernel: &TriKernelField) -> Result<()> {
    let mut w = create(path)?;
    let (r, c) = (kernel.rows(), kernel.cols());
    writeln!(w, "z,zeta,{}", entry_names(name, r, c).join(","))?;
    let grid = kernel.grid();
    for k in 0..grid.n_nodes() {
        for l in 0..=k {
            let head = [grid.z(k), grid.z(l)];
            row(
                &mut w,
                head.into_iter()
                    .chain((0..r).flat_map(|i| (0..c).map(move |j| kernel.get(k, l, i, j)))),
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Header `z,zeta,<name>_i_j,...` over the unit square.
pub fn write_sq_kernel_csv(path: &Path, name: &str, kernel: &SqKernelField) -> Result<()> {
    let mut w = create(path)?;
    let (r, c) = (kernel.rows(), kernel.cols());
    writeln!(w, "z,zeta,{}", entry_names(name, r, c).join(","))?;
    let grid = kernel.grid();
    for k in 0..grid.n_nodes() {
        for l in 0..grid.n_nodes() {
            let head = [grid.z(k), grid.z(l)];
            row(
                &mut w,
                head.into_iter()
                    .chain((0..r).flat_map(|i| (0..c).map(move |j| kernel.get(k, l, i, j)))),
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Long format `i,j,value` with 1-based indices.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "i,j,value")?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            writeln!(w, "{},{},{}", i + 1, j + 1, m[(i, j)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Long format `t,z,xm_1,...,xp_1,...`; the ODE state, if any, goes to
/// `ode_path` as `t,xi_1,...`.
pub fn write_trajectory_csv(path: &Path, ode_path: Option<&Path>, traj: &Trajectory) -> Result<()> {
    let mut w = create(path)?;
    let first = traj.snapshots.first();
    let (nm, np) = first.map_or((0, 0), |s| (s.x_minus.nrows(), s.x_plus.nrows()));
    let mut header = vec!["t".to_string(), "z".to_string()];
    header.extend((1..=nm).map(|i| format!("xm_{i}")));
    header.extend((1..=np).map(|i| format!("xp_{i}")));
    writeln!(w, "{}", header.join(","))?;
    for s in &traj.snapshots {
        for k in 0..traj.grid.n_nodes() {
            let head = [s.t, traj.grid.z(k)];
            row(
                &mut w,
                head.into_iter()
                    .chain(s.x_minus.column(k).iter().copied())
                    .chain(s.x_plus.column(k).iter().copied()),
            )?;
        }
    }
    w.flush()?;
    if let (Some(p), Some(xi0)) = (ode_path, first.and_then(|s| s.xi.as_ref())) {
        let mut w = create(p)?;
        let mut header = vec!["t".to_string()];
        header.extend((1..=xi0.len()).map(|i| format!("xi_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for s in &traj.snapshots {
            let xi = s.xi.as_ref().expect("ODE state in every snapshot");
            row(&mut w, std::iter::once(s.t).chain(xi.iter().copied()))?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::other)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
