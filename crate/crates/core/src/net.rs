//! Single-hidden-layer sine networks.
//!
//! `U(x) = b2 + sum_k w2[k] * sin(W1[k] . x + b1[k])`
//!
//! Because `sin'' = -sin`, the input Laplacian and every parameter derivative
//! of the collocation loss have short closed forms, so no autodiff tape is
//! needed and the results are exact up to rounding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::PointSet;
use crate::{seed, Error, Result};

/// Network parameters stored as one flat vector `[W1 | b1 | w2 | b2]`,
/// with `W1` row-major (`h` rows of `d` entries).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpNet {
    input_dim: usize,
    hidden: usize,
    params: Vec<f64>,
}

/// Number of parameters of a `d -> h -> 1` network.
pub fn parameter_count(input_dim: usize, hidden_width: usize) -> usize {
    hidden_width * input_dim + 2 * hidden_width + 1
}

/// Glorot-uniform weights, zero biases, deterministic in `seed`.
pub fn init_net(seed: u64, input_dim: usize, hidden_width: usize) -> Result<MlpNet> {
    if !(1..=2).contains(&input_dim) {
        return Err(Error::config(format!(
            "input dimension must be 1 or 2, got {input_dim}"
        )));
    }
    if hidden_width == 0 {
        return Err(Error::config("hidden width must be at least 1"));
    }
    let mut net = MlpNet::zeros(input_dim, hidden_width);
    let mut rng = seed::rng(seed);
    let first = (6.0 / (input_dim + hidden_width) as f64).sqrt();
    let second = (6.0 / (hidden_width + 1) as f64).sqrt();
    for w in net.w1_mut() {
        *w = rng.random_range(-first..=first);
    }
    for w in net.w2_mut() {
        *w = rng.random_range(-second..=second);
    }
    Ok(net)
}

impl MlpNet {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        MlpNet {
            input_dim,
            hidden,
            params: vec![0.0; parameter_count(input_dim, hidden)],
        }
    }

    /// Builds a net from explicit layer values.
    pub fn from_layers(input_dim: usize, w1: &[f64], b1: &[f64], w2: &[f64], b2: f64) -> Result<Self> {
        let h = b1.len();
        if !(1..=2).contains(&input_dim) || h == 0 || w1.len() != h * input_dim || w2.len() != h {
            return Err(Error::config("inconsistent layer shapes"));
        }
        let mut params = Vec::with_capacity(parameter_count(input_dim, h));
        params.extend_from_slice(w1);
        params.extend_from_slice(b1);
        params.extend_from_slice(w2);
        params.push(b2);
        Self::from_params(input_dim, h, params)
    }

    pub fn from_params(input_dim: usize, hidden: usize, params: Vec<f64>) -> Result<Self> {
        if params.len() != parameter_count(input_dim, hidden) {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                parameter_count(input_dim, hidden),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::contract("non-finite network parameter"));
        }
        Ok(MlpNet {
            input_dim,
            hidden,
            params,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn w1(&self) -> &[f64] {
        &self.params[..self.hidden * self.input_dim]
    }

    pub fn b1(&self) -> &[f64] {
        let o = self.hidden * self.input_dim;
        &self.params[o..o + self.hidden]
    }

    pub fn w2(&self) -> &[f64] {
        let o = self.hidden * (self.input_dim + 1);
        &self.params[o..o + self.hidden]
    }

    pub fn b2(&self) -> f64 {
        self.params[self.params.len() - 1]
    }

    fn w1_mut(&mut self) -> &mut [f64] {
        let n = self.hidden * self.input_dim;
        &mut self.params[..n]
    }

    fn w2_mut(&mut self) -> &mut [f64] {
        let o = self.hidden * (self.input_dim + 1);
        let h = self.hidden;
        &mut self.params[o..o + h]
    }

    #[inline]
    fn pre_activation(&self, k: usize, x: &[f64]) -> f64 {
        let d = self.input_dim;
        let row = &self.params[k * d..(k + 1) * d];
        let mut z = self.params[self.hidden * d + k];
        for (w, xi) in row.iter().zip(x) {
            z += w * xi;
        }
        z
    }

    /// Squared row norms `|W1[k]|^2`.
    fn row_norms(&self) -> Vec<f64> {
        self.w1()
            .chunks_exact(self.input_dim)
            .map(|r| r.iter().map(|w| w * w).sum())
            .collect()
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.input_dim);
        let w2 = self.w2();
        let mut u = self.b2();
        for (k, w) in w2.iter().enumerate() {
            u += w * self.pre_activation(k, x).sin();
        }
        u
    }

    /// Input Laplacian `-sum_k w2[k] |W1[k]|^2 sin(W1[k] . x + b1[k])`.
    pub fn laplacian(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.input_dim);
        let d = self.input_dim;
        let w2 = self.w2();
        let mut lap = 0.0;
        for (k, w) in w2.iter().enumerate() {
            let row = &self.params[k * d..(k + 1) * d];
            let nrm: f64 = row.iter().map(|v| v * v).sum();
            lap -= w * nrm * self.pre_activation(k, x).sin();
        }
        lap
    }

    /// Mean-squared collocation loss without the gradient.
    pub fn loss(&self, batch: &CollocationBatch) -> Result<f64> {
        batch.validate(self.input_dim)?;
        let interior = batch
            .interior
            .iter()
            .enumerate()
            .map(|(p, x)| {
                let r = self.laplacian(x) + batch.rhs_at(p);
                r * r
            })
            .sum::<f64>()
            / batch.interior.len() as f64;
        let boundary = batch
            .boundary
            .iter()
            .zip(&batch.targets)
            .map(|(x, t)| {
                let e = self.evaluate(x) - t;
                e * e
            })
            .sum::<f64>()
            / batch.boundary.len() as f64;
        Ok(interior + boundary)
    }

    /// Loss and its exact gradient with respect to the flat parameter vector.
    ///
    /// Interior residual: `lap U(x) + f(x) + offset(x)`; boundary mismatch:
    /// `U(x) - target(x)`. Both terms are mean-squared.
    pub fn loss_and_grad(&self, batch: &CollocationBatch) -> Result<(f64, Vec<f64>)> {
        batch.validate(self.input_dim)?;
        let d = self.input_dim;
        let h = self.hidden;
        let nrm = self.row_norms();
        let (w1, b1, w2) = (self.w1(), self.b1(), self.w2());

        let mut grad = vec![0.0; self.params.len()];
        let (g_w1, rest) = grad.split_at_mut(h * d);
        let (g_b1, rest) = rest.split_at_mut(h);
        let (g_w2, g_b2) = rest.split_at_mut(h);

        let mut sin = vec![0.0; h];
        let mut cos = vec![0.0; h];
        let fill = |x: &[f64], sin: &mut [f64], cos: &mut [f64]| {
            for k in 0..h {
                let mut z = b1[k];
                for j in 0..d {
                    z += w1[k * d + j] * x[j];
                }
                let (s, c) = z.sin_cos();
                sin[k] = s;
                cos[k] = c;
            }
        };

        let ni = batch.interior.len() as f64;
        let mut interior_loss = 0.0;
        for (p, x) in batch.interior.iter().enumerate() {
            fill(x, &mut sin, &mut cos);
            let lap: f64 = -(0..h).map(|k| w2[k] * nrm[k] * sin[k]).sum::<f64>();
            let r = lap + batch.rhs_at(p);
            interior_loss += r * r;
            let a = 2.0 * r / ni;
            for k in 0..h {
                let wn = w2[k] * nrm[k];
                g_w2[k] -= a * nrm[k] * sin[k];
                g_b1[k] -= a * wn * cos[k];
                for j in 0..d {
                    g_w1[k * d + j] -= a * (2.0 * w2[k] * w1[k * d + j] * sin[k] + wn * cos[k] * x[j]);
                }
            }
        }

        let nb = batch.boundary.len() as f64;
        let mut boundary_loss = 0.0;
        for (x, t) in batch.boundary.iter().zip(&batch.targets) {
            fill(x, &mut sin, &mut cos);
            let u = self.b2() + (0..h).map(|k| w2[k] * sin[k]).sum::<f64>();
            let e = u - t;
            boundary_loss += e * e;
            let b = 2.0 * e / nb;
            g_b2[0] += b;
            for k in 0..h {
                let wc = w2[k] * cos[k];
                g_w2[k] += b * sin[k];
                g_b1[k] += b * wc;
                for j in 0..d {
                    g_w1[k * d + j] += b * wc * x[j];
                }
            }
        }

        Ok((interior_loss / ni + boundary_loss / nb, grad))
    }
}

/// Collocation data for one training problem.
///
/// Interior points carry the forcing `f(x)` and, for the coarse problem, an
/// additive offset; boundary points carry the Dirichlet target.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CollocationBatch {
    pub interior: PointSet,
    pub rhs: Vec<f64>,
    pub rhs_offset: Option<Vec<f64>>,
    pub boundary: PointSet,
    pub targets: Vec<f64>,
}

impl CollocationBatch {
    #[inline]
    fn rhs_at(&self, p: usize) -> f64 {
        match &self.rhs_offset {
            Some(off) => self.rhs[p] + off[p],
            None => self.rhs[p],
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.interior.is_empty() || self.boundary.is_empty() {
            return Err(Error::contract("collocation batch needs interior and boundary points"));
        }
        if self.interior.dim() != dim || self.boundary.dim() != dim {
            return Err(Error::contract(format!(
                "batch points are not {dim}-dimensional"
            )));
        }
        if self.rhs.len() != self.interior.len() || self.targets.len() != self.boundary.len() {
            return Err(Error::contract("batch value lists do not match point counts"));
        }
        if let Some(off) = &self.rhs_offset {
            if off.len() != self.interior.len() {
                return Err(Error::contract("rhs offset length does not match interior points"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit_sine_1d() -> MlpNet {
        MlpNet::from_layers(1, &[1.0], &[0.0], &[1.0], 0.0).unwrap()
    }

    #[test]
    fn parameter_counts_match_configured_budgets() {
        for (h, n) in [(323, 970), (35, 106), (15, 46), (8, 25), (3363, 10090), (168, 505), (80, 241)] {
            assert_eq!(parameter_count(1, h), n);
            assert_eq!(parameter_count(1, h), 3 * h + 1);
        }
        for (h, n) in [(2365, 9461), (594, 2377), (90, 361)] {
            assert_eq!(parameter_count(2, h), n);
            assert_eq!(parameter_count(2, h), 4 * h + 1);
        }
        assert_eq!(init_net(0, 1, 35).unwrap().parameter_count(), 106);
        assert_eq!(init_net(0, 2, 594).unwrap().parameter_count(), 2377);
    }

    #[test]
    fn init_is_deterministic_and_validated() {
        assert_eq!(init_net(4, 2, 8).unwrap(), init_net(4, 2, 8).unwrap());
        assert_ne!(init_net(4, 2, 8).unwrap(), init_net(5, 2, 8).unwrap());
        assert!(matches!(init_net(0, 3, 8), Err(Error::Config(_))));
        assert!(matches!(init_net(0, 1, 0), Err(Error::Config(_))));
        let net = init_net(1, 2, 50).unwrap();
        let bound = (6.0f64 / 52.0).sqrt();
        assert!(net.w1().iter().all(|w| w.abs() <= bound));
        assert!(net.b1().iter().all(|b| *b == 0.0));
        assert_eq!(net.b2(), 0.0);
    }

    #[test]
    fn closed_form_values() {
        let zero = MlpNet::zeros(2, 4);
        assert_eq!(zero.evaluate(&[0.3, -2.0]), 0.0);
        assert_eq!(zero.laplacian(&[0.3, -2.0]), 0.0);

        assert!((unit_sine_1d().evaluate(&[PI / 2.0]) - 1.0).abs() < 1e-15);

        // W1 . x = x + 2y = pi/2
        let net = MlpNet::from_layers(2, &[1.0, 2.0], &[0.0], &[1.0], 0.0).unwrap();
        let x = [PI / 2.0, 0.0];
        assert!((net.laplacian(&x) + 5.0).abs() < 1e-14);
    }

    #[test]
    fn exact_solution_has_zero_loss() {
        let net = unit_sine_1d();
        let xs: Vec<f64> = (1..10).map(|k| -1.0 + 0.2 * k as f64).collect();
        let batch = CollocationBatch {
            interior: PointSet::from_flat(1, xs.clone()),
            rhs: xs.iter().map(|x| x.sin()).collect(),
            rhs_offset: None,
            boundary: PointSet::from_flat(1, vec![-1.0, 1.0]),
            targets: vec![(-1.0f64).sin(), 1.0f64.sin()],
        };
        let (loss, grad) = net.loss_and_grad(&batch).unwrap();
        assert!(loss < 1e-30);
        assert!(grad.iter().all(|g| g.abs() < 1e-14));
    }

    #[test]
    fn duplicated_batch_leaves_loss_and_gradient_unchanged() {
        let net = init_net(3, 2, 6).unwrap();
        let mut interior = PointSet::new(2);
        for p in [[0.1, 0.2], [0.7, 0.4], [0.3, 0.9]] {
            interior.push(&p);
        }
        let mut boundary = PointSet::new(2);
        for p in [[0.0, 0.5], [1.0, 0.25]] {
            boundary.push(&p);
        }
        let batch = CollocationBatch {
            interior: interior.clone(),
            rhs: vec![1.0, -2.0, 0.5],
            rhs_offset: Some(vec![0.1, 0.2, 0.3]),
            boundary: boundary.clone(),
            targets: vec![0.3, -0.1],
        };
        let mut doubled = batch.clone();
        doubled.interior.extend(&interior);
        doubled.rhs.extend_from_slice(&batch.rhs);
        doubled.rhs_offset.as_mut().unwrap().extend_from_slice(&[0.1, 0.2, 0.3]);
        doubled.boundary.extend(&boundary);
        doubled.targets.extend_from_slice(&batch.targets);

        let (l1, g1) = net.loss_and_grad(&batch).unwrap();
        let (l2, g2) = net.loss_and_grad(&doubled).unwrap();
        assert!((l1 - l2).abs() <= 1e-14 * l1.abs());
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() <= 1e-13 * (1.0 + a.abs()));
        }
        assert!((net.loss(&batch).unwrap() - l1).abs() <= 1e-14 * l1);
    }

    #[test]
    fn empty_batch_is_a_contract_violation() {
        let net = init_net(0, 1, 3).unwrap();
        let batch = CollocationBatch {
            interior: PointSet::new(1),
            boundary: PointSet::from_flat(1, vec![0.0]),
            targets: vec![0.0],
            ..Default::default()
        };
        assert!(matches!(net.loss_and_grad(&batch), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_parameters_rejected() {
        assert!(MlpNet::from_params(1, 1, vec![f64::NAN, 0.0, 0.0, 0.0]).is_err());
        assert!(MlpNet::from_params(1, 1, vec![0.0; 5]).is_err());
    }
}
