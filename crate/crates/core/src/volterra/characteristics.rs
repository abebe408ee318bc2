//! Characteristic-integral solver for the `K^{--}`/`K^{-+}` kernel pair.
//!
//! Every entry of both blocks satisfies a scalar transport equation on the
//! triangle. Writing `G = K_ij * lambda_j(zeta)` removes the derivative of the
//! column velocity, and with `zeta` as curve parameter
//!
//! ```text
//! K^{--}_ij:  dz/dzeta =  lambda^-_i(z) / lambda^-_j(zeta),  dG/dzeta =  S_ij
//! K^{-+}_ij:  dz/dzeta = -lambda^-_i(z) / lambda^+_j(zeta),  dG/dzeta = -S_ij
//! ```
//!
//! where `S` is the in-domain coupling on the right-hand side. Curves are
//! stepped one grid line at a time with the explicit midpoint rule, so every
//! intermediate point lies on a line `zeta = zeta_m` and only needs 1D
//! interpolation in `z`. The geometry never changes between sweeps, so each
//! node's path integral is precomputed as a sparse combination of nodal `S`
//! samples and every sweep is a sparse mat-vec.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{interp_nodes, tri_index, tri_len, Grid1D, MatrixField1D, TriKernelField};

use super::{BcMode, KernelSolverOptions, SolveStats};

const EPS: f64 = 1e-12;

/// Kernel problem in the form of the `K^{--}`, `K^{-+}` equations.
///
/// `a` components play the role of `x^-` (rows of both blocks), `b`
/// components the role of `x^+`. `q` is the `n_b x n_a` boundary matrix of
/// the `zeta = 0` balance.
#[derive(Debug, Clone)]
pub(crate) struct KernelProblem {
    pub grid: Grid1D,
    pub lam_a: Vec<Vec<f64>>,
    pub lam_b: Vec<Vec<f64>>,
    pub a_aa: MatrixField1D,
    pub a_ab: MatrixField1D,
    pub a_ba: MatrixField1D,
    pub a_bb: MatrixField1D,
    pub q: DMatrix<f64>,
}

/// Where a node's characteristic picks up its data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Inflow {
    Diagonal = 0,
    ZetaZero = 1,
    Top = 2,
}

#[derive(Debug, Clone, Copy)]
enum Foot {
    /// Known value of `G` at the end of the path.
    Fixed(f64),
    /// `G` interpolated from the `zeta = 0` balance at `z = z_p + t h`.
    ZetaZero { p: usize, t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    AA,
    AB,
}

/// Precomputed characteristic geometry of one kernel entry.
struct EntryPlan {
    block: Block,
    i: usize,
    j: usize,
    foot: Vec<Foot>,
    inflow: Vec<Inflow>,
    inv_lam: Vec<f64>,
    offsets: Vec<usize>,
    idx: Vec<u32>,
    coef: Vec<f64>,
    /// Corrections of the path integral where it crosses a jump of a
    /// source entry: `(slot, node, weight)` applied to kernel values.
    corr_offsets: Vec<usize>,
    corr: Vec<(u32, u32, f64)>,
}

/// Position `z = c_m` of a jump of a `K^{--}` entry on every line
/// `zeta = zeta_m`; `INFINITY` where the line misses it.
struct Curve {
    c: Vec<f64>,
    far_on_tie: bool,
}

/// A jump line together with the side every node's value belongs to.
struct Jump {
    curve: Curve,
    far_node: Vec<bool>,
}

impl Curve {
    fn at(&self, grid: &Grid1D, zeta: f64) -> f64 {
        let (m, t) = grid.locate(zeta);
        let (a, b) = (self.c[m], self.c[m + 1]);
        if t == 0.0 {
            a
        } else if t == 1.0 {
            b
        } else if a.is_infinite() || b.is_infinite() {
            f64::INFINITY
        } else {
            a + t * (b - a)
        }
    }

    /// True on the side away from the diagonal.
    fn far(&self, grid: &Grid1D, (z, zeta): (f64, f64)) -> bool {
        let c = self.at(grid, zeta);
        if self.far_on_tie {
            z >= c
        } else {
            z > c
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Point {
    Line { m: usize, z: f64 },
    Diag { d: f64 },
    Top { zeta: f64 },
}

#[derive(Debug, Clone, Copy)]
enum End {
    ZetaZero { z: f64 },
    Diag { d: f64 },
    Top,
}

#[derive(Debug, Clone, Copy)]
struct StopRule {
    forward: bool,
    diag: bool,
    top: bool,
    clamp_diag: bool,
}

struct Trace {
    points: Vec<(Point, f64)>,
    end: End,
}

pub(crate) struct KernelSolution {
    pub k_aa: TriKernelField,
    pub k_ab: TriKernelField,
    pub stats: SolveStats,
    pub near_discontinuity: Vec<bool>,
}

impl KernelProblem {
    fn n_a(&self) -> usize {
        self.lam_a.len()
    }

    fn n_b(&self) -> usize {
        self.lam_b.len()
    }

    fn check_velocities(&self) -> Result<()> {
        let nodes = self.grid.n_nodes();
        for lam in [&self.lam_a, &self.lam_b] {
            for k in 0..nodes {
                for i in 0..lam.len() {
                    if lam[i][k] <= 0.0 {
                        return Err(Error::InvalidSystem(format!(
                            "velocity {} not positive at node {k}",
                            i + 1
                        )));
                    }
                    if i + 1 < lam.len() && lam[i][k] <= lam[i + 1][k] {
                        return Err(Error::InvalidSystem(format!(
                            "velocity ordering not strict at node {k}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// `G` on the diagonal of entry `(i, j)` of `K^{--}` at `z = d`.
    fn diag_g_aa(&self, i: usize, j: usize, d: f64) -> Result<f64> {
        let la_i = interp_nodes(&self.grid, &self.lam_a[i], d);
        let la_j = interp_nodes(&self.grid, &self.lam_a[j], d);
        let den = la_j - la_i;
        if den.abs() < 1e-12 {
            return Err(Error::DegenerateVelocities {
                node: self.grid.locate(d).0,
                row: i,
                col: j,
                value: den,
            });
        }
        Ok(self.a_aa.interp_entry(d, i, j) / den * la_j)
    }

    /// `G` on the diagonal of entry `(i, j)` of `K^{-+}` at `z = d`.
    fn diag_g_ab(&self, i: usize, j: usize, d: f64) -> Result<f64> {
        let la_i = interp_nodes(&self.grid, &self.lam_a[i], d);
        let lb_j = interp_nodes(&self.grid, &self.lam_b[j], d);
        let den = lb_j + la_i;
        if den.abs() < 1e-12 {
            return Err(Error::DegenerateVelocities {
                node: self.grid.locate(d).0,
                row: i,
                col: j,
                value: den,
            });
        }
        Ok(-self.a_ab.interp_entry(d, i, j) / den * lb_j)
    }

    fn trace(&self, k: usize, l: usize, slope: impl Fn(f64, f64) -> f64, rule: StopRule) -> Trace {
        let grid = &self.grid;
        let n = grid.n_cells();
        let mut m = l;
        let mut z = grid.z(k);
        let mut points = vec![(Point::Line { m, z }, grid.z(m))];
        loop {
            if !rule.forward && m == 0 {
                return Trace {
                    points,
                    end: End::ZetaZero { z: z.max(0.0) },
                };
            }
            if rule.forward && m == n {
                return Trace {
                    points,
                    end: End::Top,
                };
            }
            let mb = if rule.forward { m + 1 } else { m - 1 };
            let (za, zeta_a, zeta_b) = (z, grid.z(m), grid.z(mb));
            let step = zeta_b - zeta_a;
            let z_mid = za + 0.5 * step * slope(za, zeta_a);
            let mut zb = za + step * slope(z_mid, zeta_a + 0.5 * step);
            if rule.clamp_diag {
                zb = zb.max(zeta_b);
            }

            let mut exit: Option<(f64, End)> = None;
            if rule.diag {
                let (da, db) = (za - zeta_a, zb - zeta_b);
                let lands_on_origin = !rule.forward && mb == 0 && db.abs() < EPS;
                if db < EPS && !lands_on_origin {
                    let theta = if da - db > 0.0 {
                        (da / (da - db)).clamp(0.0, 1.0)
                    } else {
                        1.0
                    };
                    exit = Some((theta, End::Diag { d: 0.0 }));
                }
            }
            if rule.top && zb > 1.0 - EPS {
                let theta = if zb - za > 0.0 {
                    ((1.0 - za) / (zb - za)).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                if exit.is_none_or(|(t, _)| theta < t) {
                    exit = Some((theta, End::Top));
                }
            }
            if let Some((theta, end)) = exit {
                let zeta_c = zeta_a + theta * step;
                return match end {
                    End::Diag { .. } => {
                        points.push((Point::Diag { d: zeta_c }, zeta_c));
                        Trace {
                            points,
                            end: End::Diag { d: zeta_c },
                        }
                    }
                    _ => {
                        points.push((Point::Top { zeta: zeta_c }, zeta_c));
                        Trace {
                            points,
                            end: End::Top,
                        }
                    }
                };
            }
            m = mb;
            z = zb;
            points.push((Point::Line { m, z }, zeta_b));
        }
    }

    /// Sparse nodal weights of a point on the triangle.
    fn point_weights(&self, point: Point, w: f64, out: &mut Vec<(u32, f64)>) {
        let grid = &self.grid;
        let n = grid.n_cells();
        let mut push = |idx: usize, c: f64| {
            if c != 0.0 {
                out.push((idx as u32, c));
            }
        };
        match point {
            Point::Line { m, z } => {
                let (mut p, mut t) = grid.locate(z);
                if p < m {
                    p = m;
                    t = 0.0;
                }
                push(tri_index(p, m), (1.0 - t) * w);
                if t > 0.0 {
                    push(tri_index(p + 1, m), t * w);
                }
            }
            Point::Diag { d } => {
                let (p, t) = grid.locate(d);
                push(tri_index(p, p), (1.0 - t) * w);
                if t > 0.0 {
                    push(tri_index(p + 1, p + 1), t * w);
                }
            }
            Point::Top { zeta } => {
                let (q, t) = grid.locate(zeta);
                push(tri_index(n, q), (1.0 - t) * w);
                if t > 0.0 {
                    push(tri_index(n, q + 1), t * w);
                }
            }
        }
    }

    fn coords(&self, point: Point) -> (f64, f64) {
        match point {
            Point::Line { m, z } => (z, self.grid.z(m)),
            Point::Diag { d } => (d, d),
            Point::Top { zeta } => (1.0, zeta),
        }
    }

    /// Point weights that only use nodes on the point's side of the jump.
    fn sided_point_weights(&self, point: Point, w: f64, jump: &Jump, out: &mut Vec<(u32, f64)>) {
        let start = out.len();
        self.point_weights(point, w, out);
        let far = jump.curve.far(&self.grid, self.coords(point));
        let stencil: Vec<u32> = out[start..].iter().map(|&(idx, _)| idx).collect();
        let matching: Vec<u32> = stencil
            .iter()
            .copied()
            .filter(|&q| jump.far_node[q as usize] == far)
            .collect();
        if matching.len() == stencil.len() {
            return;
        }
        if let Some(&keep) = matching.first() {
            out.truncate(start);
            out.push((keep, w));
        } else if let (Point::Line { m, .. }, Some(&first), Some(&last)) =
            (point, stencil.first(), stencil.last())
        {
            // the point sits on a node of the curve up to rounding
            let k = if far {
                node_k(last as usize) + 1
            } else {
                node_k(first as usize).wrapping_sub(1)
            };
            if (m..=self.grid.n_cells()).contains(&k) && jump.far_node[tri_index(k, m)] == far {
                out.truncate(start);
                out.push((tri_index(k, m) as u32, w));
            }
        }
    }

    /// Path weights that split each segment where it crosses `curve` and
    /// take values from the matching side only.
    fn sided_path_weights(&self, trace: &Trace, sign: f64, jump: &Jump, out: &mut Vec<(u32, f64)>) {
        let grid = &self.grid;
        let curve = &jump.curve;
        for pair in trace.points.windows(2) {
            let (pa, za) = pair[0];
            let (pb, zb) = pair[1];
            let len = (zb - za).abs() * sign;
            let (ca, cb) = (self.coords(pa), self.coords(pb));
            let theta = if curve.far(grid, ca) != curve.far(grid, cb) {
                let da = ca.0 - curve.at(grid, ca.1);
                let db = cb.0 - curve.at(grid, cb.1);
                let theta = da / (da - db);
                if theta.is_finite() {
                    theta.clamp(0.0, 1.0)
                } else {
                    0.5
                }
            } else {
                0.5
            };
            self.sided_point_weights(pa, theta * len, jump, out);
            self.sided_point_weights(pb, (1.0 - theta) * len, jump, out);
        }
    }

    /// Jump line of `K^{--}_ij`: the characteristic through the origin
    /// for `i < j`, through `(1, 1)` for `i > j`.
    fn curve(&self, i: usize, j: usize) -> Option<Curve> {
        if i == j {
            return None;
        }
        let grid = &self.grid;
        let n = grid.n_cells();
        let slope = |z: f64, zeta: f64| {
            interp_nodes(grid, &self.lam_a[i], z.clamp(0.0, 1.0))
                / interp_nodes(grid, &self.lam_a[j], zeta)
        };
        let mut c = vec![f64::INFINITY; n + 1];
        let step_to = |z: f64, m: usize, mb: usize| {
            let (zeta_a, zeta_b) = (grid.z(m), grid.z(mb));
            let step = zeta_b - zeta_a;
            let z_mid = z + 0.5 * step * slope(z, zeta_a);
            z + step * slope(z_mid, zeta_a + 0.5 * step)
        };
        if i < j {
            c[0] = 0.0;
            let mut z = 0.0;
            for m in 0..n {
                z = step_to(z, m, m + 1);
                c[m + 1] = z;
                if z > 1.0 {
                    break;
                }
            }
        } else {
            c[n] = 1.0;
            let mut z = 1.0;
            for m in (1..=n).rev() {
                z = step_to(z, m, m - 1);
                c[m - 1] = z;
            }
        }
        Some(Curve {
            c,
            far_on_tie: i < j,
        })
    }

    /// Trapezoid weights of the path integral `sign * int S dzeta`.
    fn path_weights(&self, trace: &Trace, sign: f64, out: &mut Vec<(u32, f64)>) {
        for pair in trace.points.windows(2) {
            let (pa, za) = pair[0];
            let (pb, zb) = pair[1];
            let half = 0.5 * (zb - za).abs() * sign;
            self.point_weights(pa, half, out);
            self.point_weights(pb, half, out);
        }
    }

    fn zeta_zero_foot(&self, z: f64) -> Foot {
        let (p, t) = self.grid.locate(z);
        Foot::ZetaZero { p, t }
    }

    /// Inflow class, boundary value and characteristic path of one node.
    fn node_path(
        &self,
        block: Block,
        (i, j): (usize, usize),
        (k, l): (usize, usize),
        bc_mode: BcMode,
    ) -> Result<(Foot, Inflow, Option<(Trace, f64)>)> {
        let grid = self.grid;
        let n = grid.n_cells();
        let lam_a_i = &self.lam_a[i];
        let z_k = grid.z(k);
        Ok(match block {
            Block::AB => {
                if k == l {
                    (
                        Foot::Fixed(self.diag_g_ab(i, j, z_k)?),
                        Inflow::Diagonal,
                        None,
                    )
                } else {
                    let lb_j = &self.lam_b[j];
                    let slope = |z: f64, zeta: f64| {
                        -interp_nodes(&grid, lam_a_i, z) / interp_nodes(&grid, lb_j, zeta)
                    };
                    let rule = StopRule {
                        forward: true,
                        diag: true,
                        top: false,
                        clamp_diag: false,
                    };
                    let tr = self.trace(k, l, slope, rule);
                    match tr.end {
                        End::Diag { d } => (
                            Foot::Fixed(self.diag_g_ab(i, j, d)?),
                            Inflow::Diagonal,
                            Some((tr, 1.0)),
                        ),
                        _ => unreachable!("K^-+ characteristics always reach the diagonal"),
                    }
                }
            }
            Block::AA => {
                let la_j = &self.lam_a[j];
                let slope = |z: f64, zeta: f64| {
                    interp_nodes(&grid, lam_a_i, z) / interp_nodes(&grid, la_j, zeta)
                };
                let backward = |diag: bool, clamp: bool| {
                    let rule = StopRule {
                        forward: false,
                        diag,
                        top: false,
                        clamp_diag: clamp,
                    };
                    self.trace(k, l, slope, rule)
                };
                if i == j {
                    let tr = backward(false, true);
                    match tr.end {
                        End::ZetaZero { z } => {
                            (self.zeta_zero_foot(z), Inflow::ZetaZero, Some((tr, 1.0)))
                        }
                        _ => unreachable!("diagonal entries trace to zeta = 0"),
                    }
                } else if k == l && !(k == 0 && i < j) {
                    (
                        Foot::Fixed(self.diag_g_aa(i, j, z_k)?),
                        Inflow::Diagonal,
                        None,
                    )
                } else if i < j {
                    if l == 0 {
                        (self.zeta_zero_foot(z_k), Inflow::ZetaZero, None)
                    } else {
                        let tr = backward(true, false);
                        match tr.end {
                            End::ZetaZero { z } => {
                                (self.zeta_zero_foot(z), Inflow::ZetaZero, Some((tr, 1.0)))
                            }
                            End::Diag { d } => (
                                Foot::Fixed(self.diag_g_aa(i, j, d)?),
                                Inflow::Diagonal,
                                Some((tr, 1.0)),
                            ),
                            End::Top => unreachable!(),
                        }
                    }
                } else {
                    let rule = StopRule {
                        forward: true,
                        diag: true,
                        top: true,
                        clamp_diag: false,
                    };
                    let tr = if k == n {
                        Trace {
                            points: vec![(Point::Line { m: l, z: 1.0 }, grid.z(l))],
                            end: End::Top,
                        }
                    } else {
                        self.trace(k, l, slope, rule)
                    };
                    match (tr.end, bc_mode) {
                        (End::Diag { d }, _) => (
                            Foot::Fixed(self.diag_g_aa(i, j, d)?),
                            Inflow::Diagonal,
                            Some((tr, -1.0)),
                        ),
                        (End::Top, BcMode::TopZero) => {
                            (Foot::Fixed(0.0), Inflow::Top, Some((tr, -1.0)))
                        }
                        (End::Top, BcMode::TailBalance) => {
                            if l == 0 {
                                (self.zeta_zero_foot(z_k), Inflow::ZetaZero, None)
                            } else {
                                let tr = backward(false, false);
                                match tr.end {
                                    End::ZetaZero { z } => {
                                        (self.zeta_zero_foot(z), Inflow::ZetaZero, Some((tr, 1.0)))
                                    }
                                    _ => unreachable!(),
                                }
                            }
                        }
                        (End::ZetaZero { .. }, _) => unreachable!(),
                    }
                }
            }
        })
    }

    fn plan_entry(
        &self,
        block: Block,
        i: usize,
        j: usize,
        bc_mode: BcMode,
        jumps: &[Option<Jump>],
    ) -> Result<EntryPlan> {
        let grid = self.grid;
        let n = grid.n_cells();
        let na = self.n_a();
        let len = tri_len(&grid);
        let lam_col = match block {
            Block::AA => &self.lam_a[j],
            Block::AB => &self.lam_b[j],
        };
        let coupling = match block {
            Block::AA => &self.a_aa,
            Block::AB => &self.a_ab,
        };

        let nodes: Vec<(usize, usize)> =
            (0..=n).flat_map(|k| (0..=k).map(move |l| (k, l))).collect();
        type NodePlan = (Foot, Inflow, Vec<(u32, f64)>, Vec<(u32, u32, f64)>);
        let per_node: Vec<Result<NodePlan>> = nodes
            .par_iter()
            .map(|&(k, l)| {
                let (foot, inflow, path) = self.node_path(block, (i, j), (k, l), bc_mode)?;

                let mut w = Vec::new();
                let mut corr = Vec::new();
                if let Some((tr, sign)) = &path {
                    self.path_weights(tr, *sign, &mut w);
                    for (r, jump) in
                        (0..na).filter_map(|r| jumps[i * na + r].as_ref().map(|c| (r, c)))
                    {
                        let mut sided = Vec::new();
                        self.sided_path_weights(tr, *sign, jump, &mut sided);
                        let mut diff = std::collections::BTreeMap::<u32, f64>::new();
                        for &(idx, c) in &sided {
                            *diff.entry(idx).or_default() += c;
                        }
                        for &(idx, c) in &w {
                            *diff.entry(idx).or_default() -= c;
                        }
                        let slot = (i * na + r) as u32;
                        for (idx, c) in diff {
                            if c.abs() > EPS * grid.h() {
                                let l_idx = idx as usize - tri_index(node_k(idx as usize), 0);
                                corr.push((slot, idx, c * coupling.get(l_idx, r, j)));
                            }
                        }
                    }
                }
                Ok((foot, inflow, w, corr))
            })
            .collect();

        let mut plan = EntryPlan {
            block,
            i,
            j,
            foot: Vec::with_capacity(len),
            inflow: Vec::with_capacity(len),
            inv_lam: Vec::with_capacity(len),
            offsets: Vec::with_capacity(len + 1),
            idx: Vec::new(),
            coef: Vec::new(),
            corr_offsets: Vec::with_capacity(len + 1),
            corr: Vec::new(),
        };
        plan.offsets.push(0);
        plan.corr_offsets.push(0);
        for (node, r) in nodes.iter().zip(per_node) {
            let (foot, inflow, w, corr) = r?;
            plan.foot.push(foot);
            plan.inflow.push(inflow);
            plan.inv_lam.push(1.0 / lam_col[node.1]);
            for (idx, c) in w {
                plan.idx.push(idx);
                plan.coef.push(c);
            }
            plan.offsets.push(plan.idx.len());
            plan.corr.extend(corr);
            plan.corr_offsets.push(plan.corr.len());
        }
        Ok(plan)
    }

    pub fn solve(&self, opts: &KernelSolverOptions) -> Result<KernelSolution> {
        self.check_velocities()?;
        let grid = self.grid;
        let (na, nb) = (self.n_a(), self.n_b());
        let len = tri_len(&grid);
        let nodes = grid.n_nodes();

        let tri_nodes: Vec<(usize, usize)> = (0..nodes)
            .flat_map(|k| (0..=k).map(move |l| (k, l)))
            .collect();
        let jumps = (0..na * na)
            .map(|e| {
                let (i, j) = (e / na, e % na);
                let Some(curve) = self.curve(i, j) else {
                    return Ok(None);
                };
                let far_node = tri_nodes
                    .par_iter()
                    .map(|&node| {
                        let (_, inflow, _) =
                            self.node_path(Block::AA, (i, j), node, opts.bc_mode)?;
                        Ok(inflow != Inflow::Diagonal)
                    })
                    .collect::<Result<Vec<bool>>>()?;
                Ok(Some(Jump { curve, far_node }))
            })
            .collect::<Result<Vec<Option<Jump>>>>()?;
        let mut plans = Vec::with_capacity(na * (na + nb));
        for i in 0..na {
            for j in 0..na {
                plans.push(self.plan_entry(Block::AA, i, j, opts.bc_mode, &jumps)?);
            }
        }
        for i in 0..na {
            for j in 0..nb {
                plans.push(self.plan_entry(Block::AB, i, j, opts.bc_mode, &jumps)?);
            }
        }
        let slot = |block: Block, i: usize, j: usize| match block {
            Block::AA => i * na + j,
            Block::AB => na * na + i * nb + j,
        };

        // l index of every triangle node, for coefficient lookup
        let node_l: Vec<usize> = (0..nodes).flat_map(|k| 0..=k).collect();

        let mut values: Vec<Vec<f64>> = vec![vec![0.0; len]; plans.len()];
        let mut stats = SolveStats {
            iterations: 0,
            last_update: f64::INFINITY,
        };
        let lam_b0: Vec<f64> = self.lam_b.iter().map(|l| l[0]).collect();

        for iter in 1..=opts.max_iter {
            // nodal right-hand sides S for every entry
            let sources: Vec<Vec<f64>> = plans
                .par_iter()
                .map(|plan| {
                    let (i, j) = (plan.i, plan.j);
                    let (m_aa, m_ab) = match plan.block {
                        Block::AA => (&self.a_aa, &self.a_ba),
                        Block::AB => (&self.a_ab, &self.a_bb),
                    };
                    (0..len)
                        .map(|idx| {
                            let l = node_l[idx];
                            let mut s = 0.0;
                            for r in 0..na {
                                s += values[slot(Block::AA, i, r)][idx] * m_aa.get(l, r, j);
                            }
                            for r in 0..nb {
                                s += values[slot(Block::AB, i, r)][idx] * m_ab.get(l, r, j);
                            }
                            s
                        })
                        .collect()
                })
                .collect();

            // zeta = 0 balance data: [K^{-+}(z, 0) Lambda^+(0) Q]_ij
            let balance: Vec<Vec<f64>> = (0..na * na)
                .map(|e| {
                    let (i, j) = (e / na, e % na);
                    (0..nodes)
                        .map(|k| {
                            (0..nb)
                                .map(|r| {
                                    values[slot(Block::AB, i, r)][tri_index(k, 0)]
                                        * lam_b0[r]
                                        * self.q[(r, j)]
                                })
                                .sum()
                        })
                        .collect()
                })
                .collect();

            let updated: Vec<Vec<f64>> = plans
                .par_iter()
                .enumerate()
                .map(|(e, plan)| {
                    let src = &sources[e];
                    (0..len)
                        .map(|idx| {
                            let g0 = match plan.foot[idx] {
                                Foot::Fixed(g) => g,
                                Foot::ZetaZero { p, t } => {
                                    let row = &balance[plan.i * na + plan.j];
                                    if t > 0.0 {
                                        row[p] * (1.0 - t) + row[p + 1] * t
                                    } else {
                                        row[p]
                                    }
                                }
                            };
                            let range = plan.offsets[idx]..plan.offsets[idx + 1];
                            let integral: f64 = plan.idx[range.clone()]
                                .iter()
                                .zip(&plan.coef[range])
                                .map(|(&q, &c)| c * src[q as usize])
                                .sum::<f64>()
                                + plan.corr[plan.corr_offsets[idx]..plan.corr_offsets[idx + 1]]
                                    .iter()
                                    .map(|&(e, q, c)| c * values[e as usize][q as usize])
                                    .sum::<f64>();
                            (g0 + integral) * plan.inv_lam[idx]
                        })
                        .collect()
                })
                .collect();

            let update = updated
                .iter()
                .zip(&values)
                .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
                .fold(0.0, f64::max);
            values = updated;
            stats = SolveStats {
                iterations: iter,
                last_update: update,
            };
            if update < opts.iter_tol {
                break;
            }
        }
        if stats.last_update >= opts.iter_tol {
            return Err(Error::NoConvergence {
                max_iter: opts.max_iter,
                last_update: stats.last_update,
            });
        }

        let mut k_aa = TriKernelField::zeros(grid, na, na);
        let mut k_ab = TriKernelField::zeros(grid, na, nb);
        for plan in &plans {
            let v = &values[slot(plan.block, plan.i, plan.j)];
            match plan.block {
                Block::AA => k_aa.set_entry(plan.i, plan.j, v),
                Block::AB => k_ab.set_entry(plan.i, plan.j, v),
            }
        }
        let near_discontinuity = discontinuity_mask(&grid, plans.iter().map(|p| &p.inflow));
        Ok(KernelSolution {
            k_aa,
            k_ab,
            stats,
            near_discontinuity,
        })
    }
}

/// Row `k` of the triangle node with flat index `idx`.
fn node_k(idx: usize) -> usize {
    let mut k = ((((8 * idx + 1) as f64).sqrt() - 1.0) / 2.0).floor() as usize;
    while tri_index(k + 1, 0) <= idx {
        k += 1;
    }
    while tri_index(k, 0) > idx {
        k -= 1;
    }
    k
}

/// Marks nodes within two cells of a change of inflow class in any entry:
/// the centered stencil of such a node touches a value that straddles a jump
/// or whose path hugs one.
fn discontinuity_mask<'a>(
    grid: &Grid1D,
    classes: impl Iterator<Item = &'a Vec<Inflow>>,
) -> Vec<bool> {
    const REACH: usize = 2;
    let n = grid.n_cells();
    let mut mask = vec![false; tri_len(grid)];
    for class in classes {
        for k in 0..=n {
            for l in 0..=k {
                let c = class[tri_index(k, l)];
                let mixed = (k.saturating_sub(REACH)..=(k + REACH).min(n)).any(|kk| {
                    (l.saturating_sub(REACH)..=(l + REACH).min(kk))
                        .any(|ll| class[tri_index(kk, ll)] != c)
                });
                if mixed {
                    mask[tri_index(k, l)] = true;
                }
            }
        }
    }
    mask
}
