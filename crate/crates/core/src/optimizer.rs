//! Full-batch Adam training of a single network.

use serde::{Deserialize, Serialize};

use crate::net::{CollocationBatch, MlpNet};
use crate::{Error, Result};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

/// Adam moment accumulators and hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::contract(format!(
                "adam state has {} slots, params {}, grad {}",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Result of a training call.
#[derive(Debug, Clone)]
pub struct Trained {
    pub net: MlpNet,
    /// Loss before each epoch's update.
    pub losses: Vec<f64>,
    /// Loss of the returned net.
    pub final_loss: f64,
}

/// Runs `epochs` full-batch Adam steps from a fresh optimizer state.
///
/// Training is deterministic: the batch is fixed and no sampling happens here.
pub fn train(net: &MlpNet, batch: &CollocationBatch, epochs: usize, lr: f64) -> Result<Trained> {
    let mut state = AdamState::new(net.parameter_count(), lr);
    train_with_state(net, &mut state, batch, epochs)
}

/// As [`train`], continuing from an existing optimizer state.
pub fn train_with_state(
    net: &MlpNet,
    state: &mut AdamState,
    batch: &CollocationBatch,
    epochs: usize,
) -> Result<Trained> {
    if epochs == 0 {
        return Err(Error::config("epoch count must be at least 1"));
    }
    if !(state.lr > 0.0) {
        return Err(Error::config("learning rate must be positive"));
    }
    let mut net = net.clone();
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let (loss, grad) = net.loss_and_grad(batch)?;
        if !loss.is_finite() {
            return Err(Error::Internal(format!(
                "training loss became non-finite after {} epochs",
                losses.len()
            )));
        }
        losses.push(loss);
        state.step(net.params_mut(), &grad)?;
    }
    let final_loss = net.loss(batch)?;
    Ok(Trained {
        net,
        losses,
        final_loss,
    })
}
