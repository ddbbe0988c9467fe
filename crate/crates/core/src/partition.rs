//! Uniform overlapping box partitions and collocation sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{PointSet, Rect};
use crate::problems::PoissonProblem;
use crate::seed::{self, tags};
use crate::{Error, Result};

/// Overlapping subdomains built from a uniform tensor grid of cells.
///
/// Each cell of width `H` is extended by `delta / 2` across every interior
/// face and clipped at the domain boundary, so neighbouring boxes overlap by
/// exactly `delta = overlap_ratio * H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapPartition {
    pub domain: Rect,
    pub per_axis: usize,
    pub overlap_ratio: f64,
    /// Cell width per axis.
    pub cell_width: [f64; 2],
    /// Overlap width per axis.
    pub delta: [f64; 2],
    pub boxes: Vec<Rect>,
    /// Maximum number of boxes sharing a point.
    pub nc: usize,
}

pub fn build_partition(domain: Rect, per_axis: usize, overlap_ratio: f64) -> Result<OverlapPartition> {
    if per_axis == 0 {
        return Err(Error::config("subdomains per axis must be at least 1"));
    }
    if !(overlap_ratio > 0.0 && overlap_ratio < 1.0) {
        return Err(Error::config(format!(
            "overlap ratio must lie in (0, 1), got {overlap_ratio}"
        )));
    }
    let dim = domain.dim;
    let mut cell_width = [0.0; 2];
    let mut delta = [0.0; 2];
    let mut intervals: Vec<Vec<(f64, f64)>> = Vec::with_capacity(dim);
    for a in 0..dim {
        let h = domain.side(a) / per_axis as f64;
        let half = overlap_ratio * h / 2.0;
        cell_width[a] = h;
        delta[a] = overlap_ratio * h;
        let iv = (0..per_axis)
            .map(|k| {
                let lo = if k == 0 {
                    domain.lo[a]
                } else {
                    domain.lo[a] + k as f64 * h - half
                };
                let hi = if k + 1 == per_axis {
                    domain.hi[a]
                } else {
                    domain.lo[a] + (k + 1) as f64 * h + half
                };
                (lo, hi)
            })
            .collect();
        intervals.push(iv);
    }

    let boxes = if dim == 1 {
        intervals[0].iter().map(|&(lo, hi)| Rect::interval(lo, hi)).collect()
    } else {
        let mut boxes = Vec::with_capacity(per_axis * per_axis);
        for &(xl, xh) in &intervals[0] {
            for &(yl, yh) in &intervals[1] {
                boxes.push(Rect::rectangle([xl, yl], [xh, yh]));
            }
        }
        boxes
    };
    let nc = intervals.iter().map(|iv| max_interval_overlap(iv)).product();

    Ok(OverlapPartition {
        domain,
        per_axis,
        overlap_ratio,
        cell_width,
        delta,
        boxes,
        nc,
    })
}

/// Largest number of closed intervals sharing a point.
fn max_interval_overlap(intervals: &[(f64, f64)]) -> usize {
    intervals
        .iter()
        .flat_map(|&(lo, hi)| [lo, hi])
        .map(|p| intervals.iter().filter(|&&(lo, hi)| lo <= p && p <= hi).count())
        .max()
        .unwrap_or(0)
}

impl OverlapPartition {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.domain.dim
    }

    /// Largest cell width.
    pub fn h(&self) -> f64 {
        self.cell_width[..self.dim()].iter().cloned().fold(0.0, f64::max)
    }

    /// Indices of every closed box containing `x`.
    pub fn multiplicity(&self, x: &[f64]) -> Result<Vec<usize>> {
        self.domain.check_point(x)?;
        Ok(self.sharing(x))
    }

    /// Unchecked variant of [`multiplicity`](Self::multiplicity) for points
    /// already known to lie in the domain.
    pub(crate) fn sharing(&self, x: &[f64]) -> Vec<usize> {
        let n = self.per_axis;
        if self.dim() == 1 {
            let cands = self.axis_candidates(0, x[0]);
            return cands.filter(|&i| self.boxes[i].contains(x)).collect();
        }
        let mut out = Vec::with_capacity(4);
        for ix in self.axis_candidates(0, x[0]) {
            for iy in self.axis_candidates(1, x[1]) {
                let i = ix * n + iy;
                if self.boxes[i].contains(x) {
                    out.push(i);
                }
            }
        }
        out
    }

    /// Cell indices along one axis whose extended interval could hold `t`.
    fn axis_candidates(&self, axis: usize, t: f64) -> impl Iterator<Item = usize> {
        let n = self.per_axis;
        let cell = ((t - self.domain.lo[axis]) / self.cell_width[axis]).floor();
        let cell = if cell.is_finite() { (cell.max(0.0) as usize).min(n - 1) } else { 0 };
        cell.saturating_sub(1)..=(cell + 1).min(n - 1)
    }
}

/// Point budgets for [`sample_training_sets`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub interior_per_sub: usize,
    pub boundary_per_sub: usize,
    /// Zero when no coarse problem is solved.
    pub coarse_interior: usize,
    pub coarse_boundary: usize,
}

/// Collocation sets for every subdomain and for the coarse problem.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSets {
    pub interior: Vec<PointSet>,
    pub boundary: Vec<PointSet>,
    pub coarse_interior: PointSet,
    pub coarse_boundary: PointSet,
    pub seed: u64,
}

impl TrainingSets {
    pub fn has_coarse(&self) -> bool {
        !self.coarse_interior.is_empty() && !self.coarse_boundary.is_empty()
    }
}

/// Samples uniform interior points in each open box and boundary points on
/// each box boundary (the two endpoints in 1D; an even split across the
/// four edges in 2D). Coarse sets cover the whole domain.
pub fn sample_training_sets(
    p: &OverlapPartition,
    problem: &PoissonProblem,
    counts: SampleCounts,
    seed: u64,
) -> Result<TrainingSets> {
    if problem.dim() != p.dim() {
        return Err(Error::config("problem and partition dimensions differ"));
    }
    if counts.interior_per_sub == 0 || counts.boundary_per_sub == 0 {
        return Err(Error::config("per-subdomain point counts must be at least 1"));
    }
    if (counts.coarse_interior == 0) != (counts.coarse_boundary == 0) {
        return Err(Error::config(
            "coarse interior and boundary counts must both be zero or both positive",
        ));
    }
    if p.dim() == 1 {
        if counts.boundary_per_sub != 2 {
            return Err(Error::config(format!(
                "1D subdomain boundaries are the two endpoints; boundary_per_sub must be 2, got {}",
                counts.boundary_per_sub
            )));
        }
        if counts.coarse_boundary != 0 && counts.coarse_boundary != 2 {
            return Err(Error::config("1D coarse boundary set is the two endpoints; count must be 2"));
        }
    }

    let mut interior = Vec::with_capacity(p.len());
    let mut boundary = Vec::with_capacity(p.len());
    for (i, b) in p.boxes.iter().enumerate() {
        let mut rng = seed::rng(seed::derive(seed, tags::LOCAL_POINTS, i as u64));
        interior.push(sample_interior(b, counts.interior_per_sub, &mut rng));
        boundary.push(sample_boundary(b, counts.boundary_per_sub, &mut rng));
    }
    let mut rng = seed::rng(seed::derive(seed, tags::COARSE_POINTS, 0));
    let coarse_interior = if counts.coarse_interior > 0 {
        sample_interior(&p.domain, counts.coarse_interior, &mut rng)
    } else {
        PointSet::new(p.dim())
    };
    let coarse_boundary = if counts.coarse_boundary > 0 {
        sample_boundary(&p.domain, counts.coarse_boundary, &mut rng)
    } else {
        PointSet::new(p.dim())
    };
    Ok(TrainingSets {
        interior,
        boundary,
        coarse_interior,
        coarse_boundary,
        seed,
    })
}

fn open_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    loop {
        let t = rng.random_range(lo..hi);
        if t > lo {
            return t;
        }
    }
}

fn sample_interior<R: Rng>(b: &Rect, n: usize, rng: &mut R) -> PointSet {
    let mut pts = PointSet::with_capacity(b.dim, n);
    let mut x = [0.0; 2];
    for _ in 0..n {
        for a in 0..b.dim {
            x[a] = open_uniform(rng, b.lo[a], b.hi[a]);
        }
        pts.push(&x[..b.dim]);
    }
    pts
}

fn sample_boundary<R: Rng>(b: &Rect, n: usize, rng: &mut R) -> PointSet {
    if b.dim == 1 {
        return PointSet::from_flat(1, vec![b.lo[0], b.hi[0]]);
    }
    let mut pts = PointSet::with_capacity(2, n);
    // bottom, right, top, left
    for edge in 0..4 {
        let share = n / 4 + usize::from(edge < n % 4);
        for _ in 0..share {
            let s = rng.random_range(0.0..=1.0);
            let p = match edge {
                0 => [b.lo[0] + s * b.side(0), b.lo[1]],
                1 => [b.hi[0], b.lo[1] + s * b.side(1)],
                2 => [b.lo[0] + s * b.side(0), b.hi[1]],
                _ => [b.lo[0], b.lo[1] + s * b.side(1)],
            };
            pts.push(&[p[0].clamp(b.lo[0], b.hi[0]), p[1].clamp(b.lo[1], b.hi[1])]);
        }
    }
    pts
}
