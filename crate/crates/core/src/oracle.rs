//! Finite-difference additive Schwarz solver used as a ground truth for the
//! convergence behaviour of the outer iteration.
//!
//! Subdomain problems are solved exactly (banded Cholesky on the 3-point or
//! 5-point Laplacian), so the measured per-iteration energy-error ratios are
//! those of the outer iteration alone.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::Rect;
use crate::partition::OverlapPartition;
use crate::problems::PoissonProblem;
use crate::schwarz::Level;
use crate::{Error, Result};

/// Uniform node grid over a box, boundary nodes included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdGrid {
    pub domain: Rect,
    /// Node count per axis (second entry is 1 in 1D).
    pub nodes: [usize; 2],
    pub h: [f64; 2],
}

impl FdGrid {
    pub fn new(domain: Rect, nodes_per_axis: usize) -> Result<Self> {
        if nodes_per_axis < 3 {
            return Err(Error::config("a finite-difference grid needs at least 3 nodes per axis"));
        }
        let mut nodes = [1, 1];
        let mut h = [0.0, 0.0];
        for a in 0..domain.dim {
            nodes[a] = nodes_per_axis;
            h[a] = domain.side(a) / (nodes_per_axis - 1) as f64;
        }
        Ok(FdGrid { domain, nodes, h })
    }

    pub fn dim(&self) -> usize {
        self.domain.dim
    }

    pub fn len(&self) -> usize {
        self.nodes[0] * self.nodes[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.nodes[1] + j
    }

    pub fn coord(&self, i: usize, j: usize) -> [f64; 2] {
        let along = |a: usize, k: usize| {
            if k + 1 == self.nodes[a] {
                self.domain.hi[a]
            } else {
                self.domain.lo[a] + k as f64 * self.h[a]
            }
        };
        if self.dim() == 1 {
            [along(0, i), 0.0]
        } else {
            [along(0, i), along(1, j)]
        }
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        let edge = |a: usize, k: usize| k == 0 || k + 1 == self.nodes[a];
        edge(0, i) || (self.dim() == 2 && edge(1, j))
    }

    /// Samples `f` at every node.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.nodes[0] {
            for j in 0..self.nodes[1] {
                out.push(f(&self.coord(i, j)[..d]));
            }
        }
        out
    }

    /// Discrete energy norm: `sqrt(sum over grid edges of (h^d / h_axis^2) (v_a - v_b)^2)`.
    pub fn energy_norm(&self, v: &[f64]) -> f64 {
        let cell: f64 = self.h[..self.dim()].iter().product();
        let mut sum = 0.0;
        for i in 0..self.nodes[0] {
            for j in 0..self.nodes[1] {
                let here = v[self.index(i, j)];
                if i + 1 < self.nodes[0] {
                    let d = v[self.index(i + 1, j)] - here;
                    sum += cell / (self.h[0] * self.h[0]) * d * d;
                }
                if self.dim() == 2 && j + 1 < self.nodes[1] {
                    let d = v[self.index(i, j + 1)] - here;
                    sum += cell / (self.h[1] * self.h[1]) * d * d;
                }
            }
        }
        sum.sqrt()
    }

    /// `f + lap_h v` at every interior node (zero on the boundary).
    pub fn residual(&self, f: &[f64], v: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.len()];
        for i in 0..self.nodes[0] {
            for j in 0..self.nodes[1] {
                if self.is_boundary(i, j) {
                    continue;
                }
                let g = self.index(i, j);
                let mut lap = (v[self.index(i - 1, j)] - 2.0 * v[g] + v[self.index(i + 1, j)]) / (self.h[0] * self.h[0]);
                if self.dim() == 2 {
                    lap += (v[self.index(i, j - 1)] - 2.0 * v[g] + v[self.index(i, j + 1)]) / (self.h[1] * self.h[1]);
                }
                r[g] = f[g] + lap;
            }
        }
        r
    }
}

/// Cholesky factor of a symmetric positive definite band matrix.
#[derive(Debug, Clone)]
struct BandCholesky {
    n: usize,
    bw: usize,
    // Row i holds L[i][i-bw..=i] in slots 0..=bw.
    l: Vec<f64>,
}

impl BandCholesky {
    /// `entry(i, j)` is queried for `i - bw <= j <= i` only.
    fn factor(n: usize, bw: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let mut s = entry(i, j);
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    s -= l[i * w + (k + bw - i)] * l[j * w + (k + bw - j)];
                }
                if j == i {
                    if !(s > 0.0) {
                        return Err(Error::Internal("matrix is not positive definite".into()));
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + (j + bw - i)] = s / l[j * w + bw];
                }
            }
        }
        Ok(BandCholesky { n, bw, l })
    }

    fn solve(&self, b: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[i * w + (k + bw - i)] * b[k];
            }
            b[i] = s / self.l[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.l[k * w + (i + bw - k)] * b[k];
            }
            b[i] = s / self.l[i * w + bw];
        }
    }
}

/// Dirichlet solver for the nodes strictly inside a node-index box.
#[derive(Debug, Clone)]
struct BoxSolver {
    lo: [usize; 2],
    hi: [usize; 2],
    // interior extent per axis
    m: [usize; 2],
    chol: BandCholesky,
}

impl BoxSolver {
    fn new(grid: &FdGrid, lo: [usize; 2], hi: [usize; 2]) -> Result<Self> {
        let dim = grid.dim();
        let m = [
            hi[0].saturating_sub(lo[0]).saturating_sub(1),
            if dim == 2 { hi[1].saturating_sub(lo[1]).saturating_sub(1) } else { 1 },
        ];
        if m[0] == 0 || m[1] == 0 {
            return Err(Error::config("subdomain contains no interior grid node"));
        }
        let (ax, ay) = (1.0 / (grid.h[0] * grid.h[0]), if dim == 2 { 1.0 / (grid.h[1] * grid.h[1]) } else { 0.0 });
        let n = m[0] * m[1];
        let bw = if dim == 2 { m[1] } else { 1 };
        let chol = BandCholesky::factor(n, bw, |r, c| {
            if r == c {
                2.0 * ax + 2.0 * ay
            } else if dim == 2 && r - c == 1 && r % m[1] != 0 {
                -ay
            } else if r - c == bw && (dim == 2 || bw == 1) {
                -ax
            } else {
                0.0
            }
        })?;
        Ok(BoxSolver { lo, hi, m, chol })
    }

    fn unknowns(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let ys = if self.m[1] == 1 && self.hi[1] == self.lo[1] { 0..1 } else { self.lo[1] + 1..self.hi[1] };
        (self.lo[0] + 1..self.hi[0]).flat_map(move |i| ys.clone().map(move |j| (i, j)))
    }

    /// Solves `-lap_h w = f` inside the box with `w = v` on its boundary.
    /// Returns `(global index, value)` for each interior node.
    fn solve(&self, grid: &FdGrid, f: &[f64], v: &[f64]) -> Vec<(usize, f64)> {
        let dim = grid.dim();
        let (ax, ay) = (1.0 / (grid.h[0] * grid.h[0]), 1.0 / (grid.h[1] * grid.h[1]));
        let nodes: Vec<(usize, usize)> = self.unknowns().collect();
        let mut b: Vec<f64> = nodes
            .iter()
            .map(|&(i, j)| {
                let mut s = f[grid.index(i, j)];
                if i == self.lo[0] + 1 {
                    s += ax * v[grid.index(i - 1, j)];
                }
                if i + 1 == self.hi[0] {
                    s += ax * v[grid.index(i + 1, j)];
                }
                if dim == 2 {
                    if j == self.lo[1] + 1 {
                        s += ay * v[grid.index(i, j - 1)];
                    }
                    if j + 1 == self.hi[1] {
                        s += ay * v[grid.index(i, j + 1)];
                    }
                }
                s
            })
            .collect();
        self.chol.solve(&mut b);
        nodes.iter().zip(b).map(|(&(i, j), w)| (grid.index(i, j), w)).collect()
    }
}

fn whole_box(grid: &FdGrid) -> ([usize; 2], [usize; 2]) {
    let hi1 = if grid.dim() == 2 { grid.nodes[1] - 1 } else { 0 };
    ([0, 0], [grid.nodes[0] - 1, hi1])
}

fn check_grid(problem: &PoissonProblem, grid: &FdGrid) -> Result<()> {
    if grid.domain != problem.domain {
        return Err(Error::config("grid does not cover the problem domain"));
    }
    Ok(())
}

/// Direct solve of the discrete Dirichlet problem on the whole grid.
pub fn fd_solve(problem: &PoissonProblem, grid: &FdGrid) -> Result<Vec<f64>> {
    check_grid(problem, grid)?;
    let f = grid.sample(|x| problem.forcing(x));
    let mut u = boundary_iterate(problem, grid);
    let (lo, hi) = whole_box(grid);
    let solver = BoxSolver::new(grid, lo, hi)?;
    for (g, w) in solver.solve(grid, &f, &u) {
        u[g] = w;
    }
    Ok(u)
}

/// Zero in the interior, `g` on the boundary.
fn boundary_iterate(problem: &PoissonProblem, grid: &FdGrid) -> Vec<f64> {
    let d = grid.dim();
    let mut u = vec![0.0; grid.len()];
    for i in 0..grid.nodes[0] {
        for j in 0..grid.nodes[1] {
            if grid.is_boundary(i, j) {
                u[grid.index(i, j)] = problem.boundary(&grid.coord(i, j)[..d]);
            }
        }
    }
    u
}

/// Snaps each partition box to the nearest grid nodes and checks that every
/// interior node is an unknown of at least one subdomain.
fn snap_boxes(partition: &OverlapPartition, grid: &FdGrid) -> Result<Vec<([usize; 2], [usize; 2])>> {
    let dim = grid.dim();
    let snap = |a: usize, t: f64| ((t - grid.domain.lo[a]) / grid.h[a]).round() as usize;
    let boxes: Vec<_> = partition
        .boxes
        .iter()
        .map(|b| {
            let mut lo = [0, 0];
            let mut hi = [0, 0];
            for a in 0..dim {
                lo[a] = snap(a, b.lo[a]);
                hi[a] = snap(a, b.hi[a]).min(grid.nodes[a] - 1);
            }
            (lo, hi)
        })
        .collect();
    let mut covered = vec![false; grid.len()];
    for (lo, hi) in &boxes {
        for i in lo[0] + 1..hi[0] {
            if dim == 1 {
                covered[grid.index(i, 0)] = true;
                continue;
            }
            for j in lo[1] + 1..hi[1] {
                covered[grid.index(i, j)] = true;
            }
        }
    }
    for i in 0..grid.nodes[0] {
        for j in 0..grid.nodes[1] {
            if !grid.is_boundary(i, j) && !covered[grid.index(i, j)] {
                return Err(Error::config(format!(
                    "partition does not align with the grid: node {:?} lies in no subdomain interior",
                    &grid.coord(i, j)[..dim]
                )));
            }
        }
    }
    Ok(boxes)
}

/// Linear (1D) / bilinear (2D) coarse space with `m` interior nodes per axis.
#[derive(Debug, Clone)]
struct CoarseSpace {
    // Per fine node: (coarse index, weight) pairs.
    weights: Vec<Vec<(usize, f64)>>,
    size: usize,
    chol: BandCholesky,
}

impl CoarseSpace {
    fn new(grid: &FdGrid, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::config("coarse grid needs at least one interior node"));
        }
        let dim = grid.dim();
        let hat = |a: usize, t: f64| -> Vec<(usize, f64)> {
            let hc = grid.domain.side(a) / (m + 1) as f64;
            let s = (t - grid.domain.lo[a]) / hc;
            let k = s.floor() as isize;
            [k, k + 1]
                .into_iter()
                .filter(|&c| c >= 1 && c <= m as isize)
                .map(|c| (c as usize - 1, (1.0 - (s - c as f64).abs()).max(0.0)))
                .filter(|&(_, w)| w > 0.0)
                .collect()
        };
        let mut weights = Vec::with_capacity(grid.len());
        for i in 0..grid.nodes[0] {
            for j in 0..grid.nodes[1] {
                if grid.is_boundary(i, j) {
                    weights.push(Vec::new());
                    continue;
                }
                let x = grid.coord(i, j);
                let wx = hat(0, x[0]);
                if dim == 1 {
                    weights.push(wx);
                } else {
                    let wy = hat(1, x[1]);
                    let mut w = Vec::with_capacity(4);
                    for &(cx, vx) in &wx {
                        for &(cy, vy) in &wy {
                            w.push((cx * m + cy, vx * vy));
                        }
                    }
                    weights.push(w);
                }
            }
        }
        let size = if dim == 1 { m } else { m * m };

        // Galerkin operator P^T A P, assembled column by column.
        let zero_f = vec![0.0; grid.len()];
        let mut dense = vec![0.0; size * size];
        for c in 0..size {
            let mut col = vec![0.0; grid.len()];
            for (g, w) in weights.iter().enumerate() {
                if let Some(&(_, v)) = w.iter().find(|(k, _)| *k == c) {
                    col[g] = v;
                }
            }
            // residual(0, v) = lap_h v = -A v
            let av = grid.residual(&zero_f, &col);
            for (g, w) in weights.iter().enumerate() {
                for &(r, v) in w {
                    dense[r * size + c] -= v * av[g];
                }
            }
        }
        let chol = BandCholesky::factor(size, size.saturating_sub(1), |r, c| dense[r * size + c])?;
        Ok(CoarseSpace { weights, size, chol })
    }

    /// A-orthogonal projection of the error given the residual `r = A e`.
    fn correction(&self, r: &[f64]) -> Vec<f64> {
        let mut rc = vec![0.0; self.size];
        for (g, w) in self.weights.iter().enumerate() {
            for &(c, v) in w {
                rc[c] += v * r[g];
            }
        }
        self.chol.solve(&mut rc);
        self.weights
            .iter()
            .map(|w| w.iter().map(|&(c, v)| v * rc[c]).sum())
            .collect()
    }
}

/// One row of an oracle history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub iter: usize,
    pub energy_error: f64,
    /// `energy_error[n] / energy_error[n-1]`; absent for the initial row.
    pub ratio: Option<f64>,
}

/// Settings of one oracle run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSettings {
    pub tau: f64,
    pub iters: usize,
    pub level: Level,
    /// Interior coarse nodes per axis; `None` uses one per subdomain.
    pub coarse_nodes: Option<usize>,
}

/// Output of [`fd_schwarz_run`].
#[derive(Debug, Clone)]
pub struct OracleRun {
    pub history: Vec<OracleRecord>,
    /// Final iterate at every grid node.
    pub iterate: Vec<f64>,
    /// Direct solution the errors are measured against.
    pub reference: Vec<f64>,
}

/// Runs the classical additive Schwarz iteration on the grid and records
/// the energy norm of `u_h - u^(n)`, where `u_h` is the direct solution.
pub fn fd_schwarz_run(
    problem: &PoissonProblem,
    partition: &OverlapPartition,
    grid: &FdGrid,
    settings: &OracleSettings,
) -> Result<OracleRun> {
    check_grid(problem, grid)?;
    if partition.domain != grid.domain {
        return Err(Error::config("partition and grid domains differ"));
    }
    let tau = settings.tau;
    if !(tau >= 0.0) || tau * partition.nc as f64 > 1.0 + 1e-12 {
        return Err(Error::config(format!(
            "tau = {tau} violates 0 < tau <= 1/Nc = {}",
            1.0 / partition.nc as f64
        )));
    }
    let boxes = snap_boxes(partition, grid)?;
    let solvers = boxes
        .iter()
        .map(|&(lo, hi)| BoxSolver::new(grid, lo, hi))
        .collect::<Result<Vec<_>>>()?;
    let coarse = match settings.level {
        Level::One => None,
        Level::Two => Some(CoarseSpace::new(grid, settings.coarse_nodes.unwrap_or(partition.per_axis))?),
    };

    let f = grid.sample(|x| problem.forcing(x));
    let reference = fd_solve(problem, grid)?;
    let mut u = boundary_iterate(problem, grid);
    let error = |u: &[f64]| {
        let e: Vec<f64> = reference.iter().zip(u).map(|(a, b)| a - b).collect();
        grid.energy_norm(&e)
    };

    let mut history = vec![OracleRecord {
        iter: 0,
        energy_error: error(&u),
        ratio: None,
    }];
    for n in 1..=settings.iters {
        let locals: Vec<Vec<(usize, f64)>> = solvers.par_iter().map(|s| s.solve(grid, &f, &u)).collect();
        let mut update = match &coarse {
            Some(c) => c.correction(&grid.residual(&f, &u)),
            None => vec![0.0; grid.len()],
        };
        for local in &locals {
            for &(g, w) in local {
                update[g] += w - u[g];
            }
        }
        for (ui, d) in u.iter_mut().zip(&update) {
            *ui += tau * d;
        }
        let e = error(&u);
        let prev = history[n - 1].energy_error;
        history.push(OracleRecord {
            iter: n,
            energy_error: e,
            ratio: (prev > 0.0).then(|| e / prev),
        });
    }
    Ok(OracleRun {
        history,
        iterate: u,
        reference,
    })
}

/// Ratios of the iterations whose error is still above `1e-10` of the
/// initial error (later ratios only measure rounding noise).
pub fn resolved_ratios(history: &[OracleRecord]) -> Vec<f64> {
    let Some(e0) = history.first().map(|r| r.energy_error) else {
        return Vec::new();
    };
    history
        .iter()
        .filter(|r| r.energy_error > 1e-10 * e0)
        .filter_map(|r| r.ratio)
        .collect()
}

/// Geometric mean of the last `window` resolved ratios.
pub fn asymptotic_ratio(history: &[OracleRecord], window: usize) -> Option<f64> {
    let usable = resolved_ratios(history);
    if usable.is_empty() || window == 0 {
        return None;
    }
    let tail = &usable[usable.len().saturating_sub(window)..];
    Some((tail.iter().map(|r| r.ln()).sum::<f64>() / tail.len() as f64).exp())
}

/// Inputs of the contraction bound `R(tau) = 1 - 2 tau / (2 + C0) + Nc^2 tau^2`
/// on the energy-error reduction `a(e_{n+1}, e_{n+1}) / a(e_n, e_n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBound {
    pub c0: f64,
    pub nc: usize,
    pub tau: f64,
}

pub fn rate_bound(b: RateBound) -> Result<f64> {
    if !(b.c0 > 0.0) {
        return Err(Error::config(format!("C0 must be positive, got {}", b.c0)));
    }
    if b.nc == 0 {
        return Err(Error::config("Nc must be at least 1"));
    }
    if !(b.tau >= 0.0) {
        return Err(Error::config("tau must be non-negative"));
    }
    let nc = b.nc as f64;
    Ok(1.0 - 2.0 * b.tau / (2.0 + b.c0) + nc * nc * b.tau * b.tau)
}

/// Minimiser `tau* = 1 / (Nc^2 (2 + C0))` and `R(tau*) = 1 - 1 / (Nc^2 (2 + C0)^2)`.
pub fn optimal_tau(c0: f64, nc: usize) -> Result<(f64, f64)> {
    rate_bound(RateBound { c0, nc, tau: 0.0 })?;
    let nc2 = (nc * nc) as f64;
    let tau = 1.0 / (nc2 * (2.0 + c0));
    let min_r = 1.0 - 1.0 / (nc2 * (2.0 + c0) * (2.0 + c0));
    Ok((tau, min_r))
}

/// Smallest `C0 > 0` for which `R(tau)` is at least the observed squared
/// energy ratio. `None` when every positive `C0` already bounds it.
///
/// Diagnostic only: the bound direction is preserved, since any `C0` at or
/// above the fitted value gives `R(tau) >= observed`.
pub fn fit_c0(observed_sq_ratio: f64, tau: f64, nc: usize) -> Result<Option<f64>> {
    if !(tau > 0.0) || nc == 0 {
        return Err(Error::config("fitting C0 needs tau > 0 and Nc >= 1"));
    }
    let nc = nc as f64;
    let slack = 1.0 + nc * nc * tau * tau - observed_sq_ratio;
    if slack <= 0.0 {
        return Err(Error::config("observed ratio exceeds every admissible bound"));
    }
    let c0 = 2.0 * tau / slack - 2.0;
    Ok((c0 > 0.0).then_some(c0))
}
