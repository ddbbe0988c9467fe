//! One-level and two-level additive Schwarz iteration over neural subdomain
//! solvers.
//!
//! The iterate `U^(n)` is never stored as a function. Only its values on the
//! subdomain boundary collocation points (and, in two-level mode, its
//! Laplacian on the coarse interior points) are tabulated and relaxed with
//!
//! ```text
//! U^(n+1)(x) = (1 - tau |s(x)|) U^(n)(x) + tau |s(x)| Uhat^(n+1)(x)
//! ```
//!
//! where `s(x)` is the set of subdomains sharing `x` and `Uhat` is the
//! multiplicity-weighted average of the current local (and coarse) networks.
//! `Uhat` is also the reported solution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{PointSet, TrapezoidGrid};
use crate::net::{init_net, CollocationBatch, MlpNet};
use crate::optimizer::{self, AdamState, Trained};
use crate::partition::{OverlapPartition, TrainingSets};
use crate::problems::PoissonProblem;
use crate::seed::{self, tags};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    One,
    Two,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchwarzConfig {
    /// Relaxation parameter; must satisfy `0 < tau * Nc <= 1`.
    pub tau: f64,
    pub max_outer: usize,
    pub epochs_per_solve: usize,
    pub coarse_epochs: usize,
    pub level: Level,
    pub warm_start: bool,
    /// Quadrature nodes per axis for error evaluation; `None` picks 1001 in
    /// 1D and 101 in 2D.
    pub eval_resolution: Option<usize>,
    /// Stop once the relative L2 change of `Uhat` drops below this; 0 disables.
    pub stop_tol: f64,
    pub learning_rate: f64,
    pub local_width: usize,
    pub coarse_width: usize,
}

impl SchwarzConfig {
    pub fn new(level: Level, tau: f64, local_width: usize) -> Self {
        SchwarzConfig {
            tau,
            max_outer: 50,
            epochs_per_solve: 10_000,
            coarse_epochs: 10_000,
            level,
            warm_start: true,
            eval_resolution: None,
            stop_tol: 0.0,
            learning_rate: optimizer::DEFAULT_LEARNING_RATE,
            local_width,
            coarse_width: local_width,
        }
    }
}

pub fn default_resolution(dim: usize) -> usize {
    if dim == 1 {
        1001
    } else {
        101
    }
}

/// Tabulated iterate values at the fixed collocation points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateTable {
    /// `U^(n)` at each point of `X_dOmega_i`, aligned with the training sets.
    pub boundary_values: Vec<Vec<f64>>,
    /// `lap U^(n)` at each coarse interior point (two-level only).
    pub interior_laplacians: Option<Vec<f64>>,
    pub iteration: usize,
}

/// Full state of an outer iteration.
#[derive(Debug, Clone)]
pub struct SchwarzState {
    problem: PoissonProblem,
    partition: OverlapPartition,
    sets: TrainingSets,
    config: SchwarzConfig,
    seed: u64,
    local_nets: Vec<MlpNet>,
    coarse_net: Option<MlpNet>,
    table: IterateTable,
    // Points on the physical boundary, pinned to g.
    pinned: Vec<Vec<bool>>,
    boundary_sharing: Vec<Vec<Vec<usize>>>,
    coarse_sharing: Vec<Vec<usize>>,
    local_rhs: Vec<Vec<f64>>,
    coarse_rhs: Vec<f64>,
}

/// Losses reported by one outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationStats {
    pub local_losses: Vec<f64>,
    pub coarse_loss: Option<f64>,
}

impl IterationStats {
    pub fn mean_local_loss(&self) -> f64 {
        self.local_losses.iter().sum::<f64>() / self.local_losses.len() as f64
    }
}

pub fn init_state(
    problem: &PoissonProblem,
    partition: &OverlapPartition,
    sets: &TrainingSets,
    config: &SchwarzConfig,
    seed: u64,
) -> Result<SchwarzState> {
    let nc = partition.nc as f64;
    if !(config.tau > 0.0) || config.tau * nc > 1.0 + 1e-12 {
        return Err(Error::config(format!(
            "tau = {} violates 0 < tau <= 1/Nc = {}",
            config.tau,
            1.0 / nc
        )));
    }
    if config.epochs_per_solve == 0 {
        return Err(Error::config("epochs_per_solve must be at least 1"));
    }
    if problem.dim() != partition.dim() {
        return Err(Error::config("problem and partition dimensions differ"));
    }
    if sets.interior.len() != partition.len() || sets.boundary.len() != partition.len() {
        return Err(Error::config("training sets do not match the partition"));
    }
    if config.level == Level::Two {
        if !sets.has_coarse() {
            return Err(Error::config("two-level mode needs coarse training points"));
        }
        if config.coarse_epochs == 0 {
            return Err(Error::config("coarse_epochs must be at least 1"));
        }
    }

    let dim = problem.dim();
    let local_nets = (0..partition.len())
        .map(|i| init_net(seed::derive(seed, tags::LOCAL_NET, i as u64), dim, config.local_width))
        .collect::<Result<Vec<_>>>()?;
    let coarse_net = match config.level {
        Level::One => None,
        Level::Two => Some(init_net(seed::derive(seed, tags::COARSE_NET, 0), dim, config.coarse_width)?),
    };

    let domain = partition.domain;
    let mut pinned = Vec::with_capacity(partition.len());
    let mut values = Vec::with_capacity(partition.len());
    let mut boundary_sharing = Vec::with_capacity(partition.len());
    for pts in &sets.boundary {
        let mut pin = Vec::with_capacity(pts.len());
        let mut val = Vec::with_capacity(pts.len());
        let mut share = Vec::with_capacity(pts.len());
        for x in pts.iter() {
            domain.check_point(x)?;
            let on_dirichlet = domain.on_boundary(x);
            pin.push(on_dirichlet);
            val.push(if on_dirichlet { problem.boundary(x) } else { 0.0 });
            share.push(partition.sharing(x));
        }
        pinned.push(pin);
        values.push(val);
        boundary_sharing.push(share);
    }
    let coarse_sharing = sets.coarse_interior.iter().map(|x| partition.sharing(x)).collect();
    let interior_laplacians = (config.level == Level::Two).then(|| vec![0.0; sets.coarse_interior.len()]);

    let local_rhs = sets
        .interior
        .iter()
        .map(|pts| pts.iter().map(|x| problem.forcing(x)).collect())
        .collect();
    let coarse_rhs = sets.coarse_interior.iter().map(|x| problem.forcing(x)).collect();

    Ok(SchwarzState {
        problem: *problem,
        partition: partition.clone(),
        sets: sets.clone(),
        config: config.clone(),
        seed,
        local_nets,
        coarse_net,
        table: IterateTable {
            boundary_values: values,
            interior_laplacians,
            iteration: 0,
        },
        pinned,
        boundary_sharing,
        coarse_sharing,
        local_rhs,
        coarse_rhs,
    })
}

impl SchwarzState {
    pub fn table(&self) -> &IterateTable {
        &self.table
    }

    pub fn config(&self) -> &SchwarzConfig {
        &self.config
    }

    pub fn partition(&self) -> &OverlapPartition {
        &self.partition
    }

    pub fn problem(&self) -> &PoissonProblem {
        &self.problem
    }

    pub fn local_nets(&self) -> &[MlpNet] {
        &self.local_nets
    }

    pub fn coarse_net(&self) -> Option<&MlpNet> {
        self.coarse_net.as_ref()
    }

    pub fn iteration(&self) -> usize {
        self.table.iteration
    }

    /// Whether boundary point `p` of subdomain `i` lies on the physical boundary.
    pub fn is_pinned(&self, i: usize, p: usize) -> bool {
        self.pinned[i][p]
    }

    pub fn set_local_net(&mut self, i: usize, net: MlpNet) -> Result<()> {
        self.check_net(&net)?;
        let slot = self
            .local_nets
            .get_mut(i)
            .ok_or_else(|| Error::contract(format!("no subdomain {i}")))?;
        *slot = net;
        Ok(())
    }

    pub fn set_coarse_net(&mut self, net: MlpNet) -> Result<()> {
        self.check_net(&net)?;
        match &mut self.coarse_net {
            Some(slot) => {
                *slot = net;
                Ok(())
            }
            None => Err(Error::contract("one-level state has no coarse network")),
        }
    }

    fn check_net(&self, net: &MlpNet) -> Result<()> {
        if net.input_dim() != self.problem.dim() {
            return Err(Error::contract("network input dimension does not match the problem"));
        }
        Ok(())
    }

    /// Replaces the tabulated values; entries on the physical boundary are
    /// re-pinned to `g`.
    pub fn set_table(&mut self, mut table: IterateTable) -> Result<()> {
        if table.boundary_values.len() != self.sets.boundary.len()
            || table
                .boundary_values
                .iter()
                .zip(&self.sets.boundary)
                .any(|(v, p)| v.len() != p.len())
        {
            return Err(Error::contract("table shape does not match the boundary sets"));
        }
        let expect_lap = (self.config.level == Level::Two).then_some(self.sets.coarse_interior.len());
        if table.interior_laplacians.as_ref().map(Vec::len) != expect_lap {
            return Err(Error::contract("table Laplacian entries do not match the coarse set"));
        }
        for (i, vals) in table.boundary_values.iter_mut().enumerate() {
            for (p, v) in vals.iter_mut().enumerate() {
                if self.pinned[i][p] {
                    *v = self.problem.boundary(self.sets.boundary[i].get(p));
                }
            }
        }
        self.table = table;
        Ok(())
    }

    /// Overrides tau without the `tau * Nc <= 1` check. Diagnostic use only.
    #[doc(hidden)]
    pub fn override_tau(&mut self, tau: f64) {
        self.config.tau = tau;
    }

    fn local_batch(&self, i: usize) -> CollocationBatch {
        CollocationBatch {
            interior: self.sets.interior[i].clone(),
            rhs: self.local_rhs[i].clone(),
            rhs_offset: None,
            boundary: self.sets.boundary[i].clone(),
            targets: self.table.boundary_values[i].clone(),
        }
    }

    /// Trains local network `i` against the current table.
    pub fn local_solve(&self, i: usize) -> Result<Trained> {
        if i >= self.local_nets.len() {
            return Err(Error::contract(format!("no subdomain {i}")));
        }
        let start = if self.config.warm_start {
            self.local_nets[i].clone()
        } else {
            init_net(
                seed::derive(self.seed, tags::LOCAL_NET, i as u64),
                self.problem.dim(),
                self.config.local_width,
            )?
        };
        optimizer::train(&start, &self.local_batch(i), self.config.epochs_per_solve, self.config.learning_rate)
    }

    /// Trains the coarse network on `-lap w = f + lap U^(n)` with zero
    /// boundary data.
    pub fn coarse_solve(&self) -> Result<Trained> {
        let coarse = self
            .coarse_net
            .as_ref()
            .ok_or_else(|| Error::contract("coarse solve requested in one-level mode"))?;
        let offset = self
            .table
            .interior_laplacians
            .as_ref()
            .ok_or_else(|| Error::contract("iterate table has no Laplacian entries"))?;
        if offset.len() != self.sets.coarse_interior.len() {
            return Err(Error::contract(format!(
                "iterate table holds {} Laplacian entries for {} coarse points",
                offset.len(),
                self.sets.coarse_interior.len()
            )));
        }
        let batch = CollocationBatch {
            interior: self.sets.coarse_interior.clone(),
            rhs: self.coarse_rhs.clone(),
            rhs_offset: Some(offset.clone()),
            boundary: self.sets.coarse_boundary.clone(),
            targets: vec![0.0; self.sets.coarse_boundary.len()],
        };
        let start = if self.config.warm_start {
            coarse.clone()
        } else {
            init_net(
                seed::derive(self.seed, tags::COARSE_NET, 0),
                self.problem.dim(),
                self.config.coarse_width,
            )?
        };
        optimizer::train(&start, &batch, self.config.coarse_epochs, self.config.learning_rate)
    }

    fn combine(&self, x: &[f64], sharing: &[usize], eval: impl Fn(&MlpNet, &[f64]) -> f64) -> f64 {
        let mut sum: f64 = sharing.iter().map(|&i| eval(&self.local_nets[i], x)).sum();
        if let Some(c) = &self.coarse_net {
            sum += eval(c, x);
        }
        sum / sharing.len() as f64
    }

    /// Multiplicity-weighted combination of the current networks at `x`.
    pub fn evaluate_uhat(&self, x: &[f64]) -> Result<f64> {
        let s = self.partition.multiplicity(x)?;
        Ok(self.combine(x, &s, MlpNet::evaluate))
    }

    pub fn laplacian_uhat(&self, x: &[f64]) -> Result<f64> {
        let s = self.partition.multiplicity(x)?;
        Ok(self.combine(x, &s, MlpNet::laplacian))
    }

    /// `Uhat` sampled at every point of `points` (which must lie in the domain).
    pub fn uhat_on(&self, points: &PointSet) -> Result<Vec<f64>> {
        for x in points.iter() {
            self.partition.domain.check_point(x)?;
        }
        let pts: Vec<&[f64]> = points.iter().collect();
        Ok(pts
            .par_iter()
            .map(|x| self.combine(x, &self.partition.sharing(x), MlpNet::evaluate))
            .collect())
    }

    /// One outer iteration: all local (and coarse) solves against the
    /// frozen table, then the relaxed table update.
    pub fn outer_iterate(&mut self) -> Result<IterationStats> {
        let n = self.local_nets.len();
        let (locals, coarse) = rayon::join(
            || {
                (0..n)
                    .into_par_iter()
                    .map(|i| self.local_solve(i))
                    .collect::<Result<Vec<_>>>()
            },
            || self.coarse_net.as_ref().map(|_| self.coarse_solve()).transpose(),
        );
        let locals = locals?;
        let coarse = coarse?;

        let local_losses = locals.iter().map(|t| t.final_loss).collect();
        self.local_nets = locals.into_iter().map(|t| t.net).collect();
        let coarse_loss = coarse.map(|t| {
            self.coarse_net = Some(t.net);
            t.final_loss
        });
        self.relax_table();
        Ok(IterationStats {
            local_losses,
            coarse_loss,
        })
    }

    /// Applies the convex-combination update with the current networks.
    fn relax_table(&mut self) {
        let tau = self.config.tau;
        let this = &*self;
        let boundary_values: Vec<Vec<f64>> = (0..this.sets.boundary.len())
            .into_par_iter()
            .map(|i| {
                this.sets.boundary[i]
                    .iter()
                    .enumerate()
                    .map(|(p, x)| {
                        let old = this.table.boundary_values[i][p];
                        if this.pinned[i][p] {
                            return old;
                        }
                        let s = &this.boundary_sharing[i][p];
                        let w = tau * s.len() as f64;
                        (1.0 - w) * old + w * this.combine(x, s, MlpNet::evaluate)
                    })
                    .collect()
            })
            .collect();
        let interior_laplacians = this.table.interior_laplacians.as_ref().map(|old| {
            let pts: Vec<&[f64]> = this.sets.coarse_interior.iter().collect();
            pts.par_iter()
                .zip(old.par_iter())
                .zip(this.coarse_sharing.par_iter())
                .map(|((x, old), s)| {
                    let w = tau * s.len() as f64;
                    (1.0 - w) * old + w * this.combine(x, s, MlpNet::laplacian)
                })
                .collect()
        });
        self.table.boundary_values = boundary_values;
        self.table.interior_laplacians = interior_laplacians;
        self.table.iteration += 1;
    }

    /// Relative L2 error of `Uhat` against the exact solution.
    pub fn relative_l2_error(&self, resolution: usize) -> Result<f64> {
        let grid = TrapezoidGrid::new(&self.partition.domain, resolution)?;
        let values = self.uhat_on(&grid.points)?;
        relative_l2_on_grid(&self.problem, &grid, &values)
    }
}

/// `||approx - u*|| / ||u*||` with trapezoid quadrature on `resolution`
/// nodes per axis.
pub fn relative_l2_error(
    problem: &PoissonProblem,
    resolution: usize,
    approx: impl Fn(&[f64]) -> f64 + Sync,
) -> Result<f64> {
    let grid = TrapezoidGrid::new(&problem.domain, resolution)?;
    let pts: Vec<&[f64]> = grid.points.iter().collect();
    let values: Vec<f64> = pts.par_iter().map(|x| approx(x)).collect();
    relative_l2_on_grid(problem, &grid, &values)
}

fn relative_l2_on_grid(problem: &PoissonProblem, grid: &TrapezoidGrid, values: &[f64]) -> Result<f64> {
    let exact: Vec<f64> = grid.points.iter().map(|x| problem.exact(x)).collect();
    let norm = grid.l2_norm(&exact);
    if norm == 0.0 {
        return Err(Error::contract("exact solution has zero L2 norm"));
    }
    let diff: Vec<f64> = values.iter().zip(&exact).map(|(a, b)| a - b).collect();
    Ok(grid.l2_norm(&diff) / norm)
}

/// One row of an error-decay history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub rel_l2: f64,
    pub mean_local_loss: Option<f64>,
    pub coarse_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub history: Vec<IterationRecord>,
    pub state: SchwarzState,
}

impl RunReport {
    pub fn final_error(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |r| r.rel_l2)
    }
}

/// Iterates until `max_outer` or until `Uhat` stops changing by more than
/// `stop_tol` (relative L2). Row 0 holds the error of the initial networks.
pub fn run(
    problem: &PoissonProblem,
    partition: &OverlapPartition,
    sets: &TrainingSets,
    config: &SchwarzConfig,
    seed: u64,
) -> Result<RunReport> {
    let mut state = init_state(problem, partition, sets, config, seed)?;
    let resolution = config.eval_resolution.unwrap_or(default_resolution(problem.dim()));
    let grid = TrapezoidGrid::new(&problem.domain, resolution)?;

    let mut previous = state.uhat_on(&grid.points)?;
    let mut history = vec![IterationRecord {
        iter: 0,
        rel_l2: relative_l2_on_grid(problem, &grid, &previous)?,
        mean_local_loss: None,
        coarse_loss: None,
    }];
    for _ in 0..config.max_outer {
        let stats = state.outer_iterate()?;
        let current = state.uhat_on(&grid.points)?;
        history.push(IterationRecord {
            iter: state.iteration(),
            rel_l2: relative_l2_on_grid(problem, &grid, &current)?,
            mean_local_loss: Some(stats.mean_local_loss()),
            coarse_loss: stats.coarse_loss,
        });
        if config.stop_tol > 0.0 {
            let diff: Vec<f64> = current.iter().zip(&previous).map(|(a, b)| a - b).collect();
            let scale = grid.l2_norm(&current);
            if scale > 0.0 && grid.l2_norm(&diff) / scale < config.stop_tol {
                break;
            }
        }
        previous = current;
    }
    Ok(RunReport { history, state })
}

/// Single-network baseline on the whole domain.
#[derive(Debug, Clone)]
pub struct SingleDomainReport {
    /// `iter` counts epochs.
    pub history: Vec<IterationRecord>,
    pub net: MlpNet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleDomainConfig {
    pub width: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub report_every: usize,
    pub eval_resolution: Option<usize>,
}

/// Trains one network on `X_Omega` / `X_dOmega` (the sets of a one-box
/// partition), recording the error every `report_every` epochs.
pub fn run_single_domain(
    problem: &PoissonProblem,
    sets: &TrainingSets,
    config: &SingleDomainConfig,
    seed: u64,
) -> Result<SingleDomainReport> {
    let SingleDomainConfig {
        width,
        epochs,
        learning_rate,
        report_every,
        eval_resolution,
    } = *config;
    let resolution = eval_resolution.unwrap_or(default_resolution(problem.dim()));
    if sets.interior.len() != 1 {
        return Err(Error::config("single-domain training needs a one-box partition"));
    }
    if epochs == 0 || report_every == 0 {
        return Err(Error::config("epochs and report interval must be positive"));
    }
    let batch = CollocationBatch {
        interior: sets.interior[0].clone(),
        rhs: sets.interior[0].iter().map(|x| problem.forcing(x)).collect(),
        rhs_offset: None,
        boundary: sets.boundary[0].clone(),
        targets: sets.boundary[0].iter().map(|x| problem.boundary(x)).collect(),
    };
    let mut net = init_net(seed::derive(seed, tags::SINGLE_NET, 0), problem.dim(), width)?;
    let mut adam = AdamState::new(net.parameter_count(), learning_rate);
    let error = |net: &MlpNet| relative_l2_error(problem, resolution, |x| net.evaluate(x));
    let mut history = vec![IterationRecord {
        iter: 0,
        rel_l2: error(&net)?,
        mean_local_loss: None,
        coarse_loss: None,
    }];
    let mut done = 0;
    while done < epochs {
        let chunk = report_every.min(epochs - done);
        let out = optimizer::train_with_state(&net, &mut adam, &batch, chunk)?;
        net = out.net;
        done += chunk;
        history.push(IterationRecord {
            iter: done,
            rel_l2: error(&net)?,
            mean_local_loss: Some(out.final_loss),
            coarse_loss: None,
        });
    }
    Ok(SingleDomainReport { history, net })
}
