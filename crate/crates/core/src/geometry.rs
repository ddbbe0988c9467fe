//! Axis-aligned boxes and flat point storage shared by every module.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Closed axis-aligned box in one or two dimensions.
///
/// In 1D only `lo[0]` / `hi[0]` are meaningful; the second slot is kept at
/// zero so the type stays `Copy` and comparable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub dim: usize,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Rect {
    pub fn interval(a: f64, b: f64) -> Self {
        Rect {
            dim: 1,
            lo: [a, 0.0],
            hi: [b, 0.0],
        }
    }

    pub fn rectangle(lo: [f64; 2], hi: [f64; 2]) -> Self {
        Rect { dim: 2, lo, hi }
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    /// Membership in the closed box.
    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.dim).all(|a| x[a] >= self.lo[a] && x[a] <= self.hi[a])
    }

    pub fn contains_strictly(&self, x: &[f64]) -> bool {
        (0..self.dim).all(|a| x[a] > self.lo[a] && x[a] < self.hi[a])
    }

    /// True when `x` is in the box and touches at least one face.
    pub fn on_boundary(&self, x: &[f64]) -> bool {
        self.contains(x) && (0..self.dim).any(|a| x[a] == self.lo[a] || x[a] == self.hi[a])
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::contract(format!(
                "point has {} coordinates, domain is {}-dimensional",
                x.len(),
                self.dim
            )));
        }
        if !self.contains(x) {
            return Err(Error::contract(format!("point {x:?} lies outside {self:?}")));
        }
        Ok(())
    }

    pub fn diameter(&self) -> f64 {
        (0..self.dim)
            .map(|a| self.side(a).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Points of a fixed dimension stored contiguously.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize) -> Self {
        PointSet {
            dim,
            coords: Vec::new(),
        }
    }

    pub fn with_capacity(dim: usize, n: usize) -> Self {
        PointSet {
            dim,
            coords: Vec::with_capacity(dim * n),
        }
    }

    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Self {
        assert!(dim > 0 && coords.len() % dim == 0, "ragged point buffer");
        PointSet { dim, coords }
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim);
        self.coords.extend_from_slice(x);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.coords.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim.max(1))
    }

    pub fn extend(&mut self, other: &PointSet) {
        debug_assert_eq!(self.dim, other.dim);
        self.coords.extend_from_slice(&other.coords);
    }
}

/// Uniform quadrature grid with composite trapezoid weights over a box.
#[derive(Debug, Clone)]
pub struct TrapezoidGrid {
    pub points: PointSet,
    pub weights: Vec<f64>,
}

impl TrapezoidGrid {
    /// `resolution` nodes per axis, endpoints included.
    pub fn new(domain: &Rect, resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::config("quadrature resolution must be at least 2"));
        }
        let axis = |a: usize| -> (Vec<f64>, Vec<f64>) {
            let h = domain.side(a) / (resolution - 1) as f64;
            let nodes = (0..resolution)
                .map(|k| {
                    if k == resolution - 1 {
                        domain.hi[a]
                    } else {
                        domain.lo[a] + k as f64 * h
                    }
                })
                .collect();
            let w = (0..resolution)
                .map(|k| if k == 0 || k == resolution - 1 { h / 2.0 } else { h })
                .collect();
            (nodes, w)
        };
        let (xs, wx) = axis(0);
        if domain.dim == 1 {
            return Ok(TrapezoidGrid {
                points: PointSet::from_flat(1, xs),
                weights: wx,
            });
        }
        let (ys, wy) = axis(1);
        let mut points = PointSet::with_capacity(2, resolution * resolution);
        let mut weights = Vec::with_capacity(resolution * resolution);
        for (x, wxi) in xs.iter().zip(&wx) {
            for (y, wyj) in ys.iter().zip(&wy) {
                points.push(&[*x, *y]);
                weights.push(wxi * wyj);
            }
        }
        Ok(TrapezoidGrid { points, weights })
    }

    /// Weighted L2 norm of sampled values.
    pub fn l2_norm(&self, values: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(values)
            .map(|(w, v)| w * v * v)
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_detection() {
        let r = Rect::rectangle([0.0, 0.0], [1.0, 1.0]);
        assert!(r.on_boundary(&[0.0, 0.3]));
        assert!(r.on_boundary(&[1.0, 1.0]));
        assert!(!r.on_boundary(&[0.5, 0.5]));
        assert!(!r.on_boundary(&[1.5, 0.0]));
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let grid = TrapezoidGrid::new(&Rect::interval(-1.0, 1.0), 11).unwrap();
        let integral: f64 = grid
            .points
            .iter()
            .zip(&grid.weights)
            .map(|(x, w)| w * (3.0 * x[0] + 2.0))
            .sum();
        assert!((integral - 4.0).abs() < 1e-13);
        let grid2 = TrapezoidGrid::new(&Rect::rectangle([0.0, 0.0], [1.0, 2.0]), 5).unwrap();
        let area: f64 = grid2.weights.iter().sum();
        assert!((area - 2.0).abs() < 1e-13);
    }

    #[test]
    fn point_set_indexing() {
        let mut p = PointSet::new(2);
        p.push(&[1.0, 2.0]);
        p.push(&[3.0, 4.0]);
        assert_eq!(p.len(), 2);
        assert_eq!(p.get(1), &[3.0, 4.0]);
        assert_eq!(p.iter().count(), 2);
    }
}
